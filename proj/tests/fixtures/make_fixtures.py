#!/usr/bin/env python3
"""Writes the VNNLIB fixture corpus: NN.vnnlib plus NN.expect.json holding
the box, the output count and formula truth values at sample points,
computed here independently of the C++ parser.

All constants and sample points are dyadic, so every evaluation is exact
and the boundary points are really on the boundary. Stdlib only.
"""

import json
import random
from fractions import Fraction
from pathlib import Path

HERE = Path(__file__).resolve().parent
COUNT = 50

CONSTS = [Fraction(n, 4) for n in range(-12, 13)]


def fmt_const(rng, c):
    if c.denominator == 1 and rng.random() < 0.5:
        return str(c.numerator)
    v = float(c)
    style = rng.randrange(4)
    if style == 0:
        return repr(v)
    if style == 1:
        return f"{v:.6f}"
    if style == 2:
        return f"{v:.3e}"
    return ("+" if v >= 0 else "") + repr(v)


class Gen:
    def __init__(self, rng, ny):
        self.rng = rng
        self.ny = ny

    # term -> (text, {var: coef}, bias)
    def term(self, depth=0):
        r = self.rng
        k = r.randrange(7 if depth < 2 else 2)
        if k <= 1:
            i = r.randrange(self.ny)
            return f"Y_{i}", {i: Fraction(1)}, Fraction(0)
        if k == 2:
            c = r.choice(CONSTS)
            return fmt_const(r, c), {}, c
        if k == 3:
            c = r.choice([Fraction(2), Fraction(-1), Fraction(1, 2), Fraction(3)])
            t, v, b = self.term(depth + 1)
            text = f"(* {fmt_const(r, c)} {t})" if r.random() < 0.5 else f"(* {t} {fmt_const(r, c)})"
            return text, {i: c * a for i, a in v.items()}, c * b
        if k == 4:
            t, v, b = self.term(depth + 1)
            return f"(- {t})", {i: -a for i, a in v.items()}, -b
        parts = [self.term(depth + 1) for _ in range(r.randint(2, 3))]
        op = "+" if k == 5 else "-"
        coef, bias = dict(parts[0][1]), parts[0][2]
        for _, v, b in parts[1:]:
            s = 1 if op == "+" else -1
            for i, a in v.items():
                coef[i] = coef.get(i, 0) + s * a
            bias += s * b
        return f"({op} {' '.join(p[0] for p in parts)})", coef, bias

    def atom(self):
        while True:
            lt, lv, lb = self.term()
            rt, rv, rb = self.term()
            coef = dict(lv)
            for i, a in rv.items():
                coef[i] = coef.get(i, 0) - a
            if any(a != 0 for a in coef.values()):
                break
        rel = self.rng.choice(["<=", ">=", "<", ">"])
        return ("atom", rel, coef, lb - rb), f"({rel} {lt} {rt})"

    def formula(self, depth, max_depth):
        r = self.rng
        if depth >= max_depth or (depth > 0 and r.random() < 0.35):
            return self.atom()
        op = r.choice(["and", "or"])
        kids = [self.formula(depth + 1, max_depth) for _ in range(r.randint(1, 4))]
        return (op, [k[0] for k in kids]), f"({op} {' '.join(k[1] for k in kids)})"


def evaluate(node, y):
    if node[0] == "atom":
        _, rel, coef, bias = node
        v = sum(a * y[i] for i, a in coef.items()) + bias
        return {"<=": v <= 0, ">=": v >= 0, "<": v < 0, ">": v > 0}[rel]
    op, kids = node
    vals = [evaluate(k, y) for k in kids]
    return all(vals) if op == "and" else any(vals)


def atoms(node):
    if node[0] == "atom":
        return [node]
    return [a for k in node[1] for a in atoms(k)]


def boundary_point(rng, atom, ny):
    """A dyadic point with the atom's affine form exactly zero, when one exists."""
    _, _, coef, bias = atom
    y = [Fraction(rng.randint(-8, 8), 4) for _ in range(ny)]
    free = [i for i, a in coef.items() if a != 0]
    i = rng.choice(free)
    rest = sum(a * y[j] for j, a in coef.items() if j != i) + bias
    y[i] = -rest / coef[i]
    if y[i].denominator & (y[i].denominator - 1):
        return None  # not dyadic, skip
    return y


def vnncomp_robustness(rng, idx):
    """The VNN-COMP idiom: box asserts and one big or of ands."""
    ny = rng.randint(3, 6)
    t = rng.randrange(ny)
    nodes, texts = [], []
    for j in range(ny):
        if j == t:
            continue
        kids, ktexts = [], []
        for i in range(ny):
            if i != j:
                kids.append(("atom", ">=", {j: Fraction(1), i: Fraction(-1)}, Fraction(0)))
                ktexts.append(f"(>= Y_{j} Y_{i})")
        nodes.append(("and", kids))
        texts.append("(and " + " ".join(ktexts) + ")")
    return ny, ("or", nodes), "(or\n    " + "\n    ".join(texts) + "\n)"


def make(idx, rng):
    nx = rng.randint(1, 5)
    if idx % 5 == 0:
        ny, tree, text = vnncomp_robustness(rng, idx)
        asserts = [(tree, text)]
    else:
        ny = rng.randint(1, 6)
        g = Gen(rng, ny)
        asserts = [g.formula(0, rng.randint(1, 4)) for _ in range(rng.randint(1, 3))]

    lines = [f"; fixture {idx:02d}", f"; {nx} inputs, {ny} outputs", ""]
    for i in range(nx):
        lines.append(f"(declare-const X_{i} Real)")
    for i in range(ny):
        lines.append(f"(declare-const Y_{i} Real)")
    lines.append("")
    lower, upper = [], []
    for i in range(nx):
        lo = Fraction(rng.randint(-16, 8), 8)
        hi = lo + Fraction(rng.randint(0, 16), 8)
        lower.append(lo)
        upper.append(hi)
        style = rng.randrange(4)
        if style == 0:
            lines.append(f"(assert (and (>= X_{i} {fmt_const(rng, lo)}) (<= X_{i} {fmt_const(rng, hi)})))")
        elif style == 1:
            # loose bound first; the tighter one wins
            lines.append(f"(assert (<= X_{i} {fmt_const(rng, hi + 1)}))")
            lines.append(f"(assert (<= X_{i} {fmt_const(rng, hi)}))")
            lines.append(f"(assert (>= X_{i} {fmt_const(rng, lo)}))")
        elif style == 2:
            lines.append(f"(assert (<= {fmt_const(rng, lo)} X_{i}))")
            lines.append(f"(assert (>= {fmt_const(rng, hi)} X_{i}))")
        else:
            lines.append(f"(assert (>= X_{i} {fmt_const(rng, lo)}))")
            lines.append(f"(assert (<= X_{i} {fmt_const(rng, hi)}))")
    lines.append("")
    for _, text in asserts:
        lines.append(f"(assert {text})")
    (HERE / f"{idx:02d}.vnnlib").write_text("\n".join(lines) + "\n")

    nodes = [a[0] for a in asserts]
    points = []
    for _ in range(60):
        points.append([Fraction(rng.randint(-12, 12), 4) for _ in range(ny)])
    all_atoms = [a for n in nodes for a in atoms(n)]
    for _ in range(60):
        p = boundary_point(rng, rng.choice(all_atoms), ny)
        if p is not None:
            points.append(p)
    truth = [all(evaluate(n, p) for n in nodes) for p in points]
    expect = {
        "num_outputs": ny,
        "lower": [float(v) for v in lower],
        "upper": [float(v) for v in upper],
        "points": [[float(v) for v in p] for p in points],
        "truth": truth,
    }
    (HERE / f"{idx:02d}.expect.json").write_text(json.dumps(expect) + "\n")


def main():
    rng = random.Random(20240601)
    for idx in range(COUNT):
        make(idx, rng)


if __name__ == "__main__":
    main()
