#pragma once

#include "robustify/error.hpp"
#include "robustify/linear_expr.hpp"
#include "robustify/formula.hpp"
#include "robustify/softmax.hpp"
#include "robustify/confidence.hpp"
#include "robustify/topk.hpp"
#include "robustify/circuit.hpp"
#include "robustify/gadget.hpp"
#include "robustify/protobuf.hpp"
#include "robustify/onnx.hpp"
#include "robustify/evaluator.hpp"
#include "robustify/vnnlib.hpp"
#include "robustify/validation.hpp"
#include "robustify/pipeline.hpp"
