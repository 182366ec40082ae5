#pragma once

#include <string>

#include "pelta/graph.hpp"

namespace pelta {

/// Line-oriented model description:
///
///   pelta-model v1
///   loss <id>
///   node <id> <Kind> [label=<name>] [parents=<j,k,...>] [shape=<a,b,...>]
///       [attrs=<key:value;...>]
///
/// Leaves carry shape=; transform shapes are re-inferred on parse and checked
/// against the declared ones. serialize(parse(s)) is canonical and
/// parse(serialize(g)) reproduces g exactly.
std::string serialize_model(const Graph& g);
Graph parse_model(const std::string& text);

std::string format_double(double v);

}  // namespace pelta
