#!/usr/bin/env python3
"""Regenerate the sample models, inputs and specs in this directory.

Needs numpy and onnx. The outputs are committed; rerun only to change them.
"""

import json
from pathlib import Path

import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper

HERE = Path(__file__).resolve().parent


def dense(sizes, seed, name):
    rng = np.random.default_rng(seed)
    nodes, inits = [], []
    prev = "X"
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        w = (rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)).astype(np.float32)
        b = (0.1 * rng.standard_normal(n_out)).astype(np.float32)
        inits += [numpy_helper.from_array(w, f"W{i}"), numpy_helper.from_array(b, f"B{i}")]
        last = i == len(sizes) - 2
        out = "Y" if last else f"h{i}"
        nodes.append(helper.make_node("Gemm", [prev, f"W{i}", f"B{i}"], [out if last else out + "_pre"]))
        if not last:
            nodes.append(helper.make_node("Relu", [out + "_pre"], [out]))
        prev = out
    graph = helper.make_graph(
        nodes,
        name,
        [helper.make_tensor_value_info("X", TensorProto.FLOAT, ["N", sizes[0]])],
        [helper.make_tensor_value_info("Y", TensorProto.FLOAT, ["N", sizes[-1]])],
        inits,
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)], producer_name="make_samples")
    model.ir_version = 8
    onnx.checker.check_model(model)
    return model


def identity(m):
    w = np.eye(m, dtype=np.float32)
    b = np.zeros(m, dtype=np.float32)
    graph = helper.make_graph(
        [helper.make_node("Gemm", ["X", "W", "B"], ["Y"])],
        f"identity{m}",
        [helper.make_tensor_value_info("X", TensorProto.FLOAT, ["N", m])],
        [helper.make_tensor_value_info("Y", TensorProto.FLOAT, ["N", m])],
        [numpy_helper.from_array(w, "W"), numpy_helper.from_array(b, "B")],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)], producer_name="make_samples")
    model.ir_version = 8
    onnx.checker.check_model(model)
    return model


def write_json(name, obj):
    (HERE / name).write_text(json.dumps(obj, indent=2) + "\n")


def main():
    onnx.save(dense([784, 64, 10], 7, "mnist_like"), HERE / "mnist_like.onnx")
    onnx.save(dense([4, 16, 4], 11, "tiny4"), HERE / "tiny4.onnx")
    onnx.save(identity(10), HERE / "identity10.onnx")
    onnx.save(identity(4), HERE / "identity4.onnx")

    rng = np.random.default_rng(3)
    np.save(HERE / "digit.npy", rng.uniform(0.0, 1.0, 784).astype(np.float32))
    (HERE / "equal_logits.txt").write_text("0.5 0.5 0.5 0.5 0.5 0.5 0.5 0.5 0.5 0.5\n")

    box10 = {"lower": [-1.0] * 10, "upper": [1.0] * 10}
    box4 = {"lower": [-1.0] * 4, "upper": [1.0] * 4}
    write_json("relaxed_mnist.json", {"kind": "relaxed", "tau": 80, "seed_input": "digit.npy", "epsilon": 0.01,
                                      "clip": [0.0, 1.0]})
    write_json("standard_mnist.json", {"kind": "standard", "seed_input": "digit.npy", "epsilon": 0.005,
                                       "clip": [0.0, 1.0]})
    write_json("strong_mnist.json", {"kind": "strong", "tau2": 30, "seed_input": "digit.npy", "epsilon": 0.005,
                                     "clip": [0.0, 1.0]})
    write_json("relaxed10.json", {"kind": "relaxed", "tau": 80, "seed_class": 3, "input_box": box10})
    write_json("smooth_infeasible.json", {"kind": "smooth", "seed_class": 0, "seed_confidence": 50, "tau": 10,
                                          "input_box": box10})
    write_json("smooth4.json", {"kind": "smooth", "seed_logits": [2.0, 0.5, 0.0, -1.0], "tau": 15,
                                "input_box": box4})
    write_json("topk4.json", {"kind": "topk", "k": 2, "seed_logits": [4.0, 3.0, 2.0, 1.0], "input_box": box4})
    write_json("topk_relaxed4.json", {"kind": "topk_relaxed", "max_rank": 2, "seed_logits": [4.0, 3.0, 2.0, 1.0],
                                      "input_box": box4})
    write_json("affinity4.json", {"kind": "topk_affinity", "max_rank": 3, "affinity_sets": [[0, 1], [2], [3]],
                                  "seed_logits": [4.0, 3.0, 2.0, 1.0], "input_box": box4})
    (HERE / "two_branch.vnnlib").write_text(
        "; two-branch DNF over three outputs\n"
        "(declare-const X_0 Real)\n(declare-const X_1 Real)\n(declare-const X_2 Real)\n(declare-const X_3 Real)\n"
        "(declare-const Y_0 Real)\n(declare-const Y_1 Real)\n(declare-const Y_2 Real)\n(declare-const Y_3 Real)\n"
        "(assert (>= X_0 -1))\n(assert (<= X_0 1))\n(assert (>= X_1 -1))\n(assert (<= X_1 1))\n"
        "(assert (>= X_2 -1))\n(assert (<= X_2 1))\n(assert (>= X_3 -1))\n(assert (<= X_3 1))\n"
        "(assert (or (and (<= (+ Y_1 Y_2) 0) (<= Y_2 0)) (and (<= Y_1 Y_3) (<= Y_3 2))))\n"
    )
    write_json("raw4.json", {"kind": "raw_vnnlib", "vnnlib": "two_branch.vnnlib"})


if __name__ == "__main__":
    main()
