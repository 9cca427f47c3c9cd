"""Smoke test for the masq extension module. Run after `maturin develop`."""

import json

import masq

CUBE = """
fn Cube(k: secret, r0: random, r1: random) {
  x = k ^ r0;
  x0 = x @ x;
  x1 = r0 @ r0;
  x2 = x0 @ r0;
  x3 = x1 @ x;
  x4 = r1 ^ x2;
  x5 = x4 ^ x3;
  x6 = x0 @ x;
  x7 = x6 ^ r1;
  x8 = x1 @ r0;
  x9 = x8 ^ x5;
  return x7, x9;
}
"""


def main():
    d = masq.Domain(8)
    assert d.poly == 0x11D and d.size == 256
    assert d.gf_mul(2, 0x80) == 0x1D

    p = masq.Program(CUBE)
    assert p.name == "Cube"
    assert p.internals()[:3] == ["x", "x0", "x1"]

    e = masq.Expr("(k ^ r) & r", secrets=["k"], randoms=["r"])
    ty, rules = e.infer()
    assert ty in {"RUD", "SID", "SDD", "UKD"}
    assert e.qms(masq.Domain(2)) == (1, 4)
    assert not e.is_si(masq.Domain(2))
    assert masq.Expr("k ^ r", secrets=["k"], randoms=["r"]).infer() == ("RUD", ["Dom"])
    assert masq.Expr("k ^ r", secrets=["k"], randoms=["r"]).is_uniform(masq.Domain(4))
    assert str(masq.Expr("(k ^ r) ^ r", secrets=["k"], randoms=["r"]).simplify()) == "k"

    types_only = dict(masq.check(p, engine="type-only").types())
    assert [x for x, t in types_only.items() if t == "UKD"] == ["x2", "x3", "x6"]

    r = masq.check(p, d, qms=True, jobs=2)
    types = dict(r.types())
    assert [x for x, t in types.items() if t == "SDD"] == ["x2", "x3"]
    assert r.qms("x2") == (253, 256) and r.program_qms == (253, 256)
    assert not r.perfectly_masked and r.exit_code == 1
    again = masq.Report.from_json(r.to_json())
    assert again.to_json() == r.to_json()
    assert json.loads(r.to_json())["poly"] == "0x11d"

    try:
        masq.Program("fn f(k: secret) { x = k ^; return x; }")
    except ValueError:
        pass
    else:
        raise AssertionError("parse error not raised")

    print("smoke test ok:", ", ".join(f"{x}:{t}" for x, t in types.items()))


if __name__ == "__main__":
    main()
