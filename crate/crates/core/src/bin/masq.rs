use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    // deep expressions recurse in the SMT emitter; give the worker a big stack
    let code = std::thread::Builder::new()
        .stack_size(256 << 20)
        .spawn(move || masq::cli::run(&args))
        .expect("spawn main thread")
        .join()
        .unwrap_or(101);
    ExitCode::from(code as u8)
}
