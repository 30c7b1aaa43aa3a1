#include "tfnas/connectors.hpp"

#include "tfnas/errors.hpp"

namespace tfnas {

ConnectorState connector_apply(const Component& f, const ArchWeight& w, const ConnectorState& s) {
  Var fx = f ? f(s.x) : nullptr;
  if (fx && !fx->value.same_shape(s.x->value))
    throw ShapeError("connector_apply: component output " + fx->value.shape_str() +
                     " vs stream " + s.x->value.shape_str());
  if (s.r && !s.r->value.same_shape(s.x->value))
    throw ShapeError("connector_apply: memory " + s.r->value.shape_str() + " vs stream " +
                     s.x->value.shape_str());

  Var acc = fx ? (s.r ? add(fx, s.r) : fx) : s.r;
  if (!acc) return {s.x, nullptr};
  if (w.is_off()) return {s.x, acc};
  if (w.is_unit()) return {add(s.x, acc), nullptr};
  Var moved = apply_weight(acc, w);
  return {add(s.x, moved), sub(acc, moved)};
}

Var omega_combine(const ConnectorState& s) {
  if (!s.r) return s.x;
  if (!s.r->value.same_shape(s.x->value))
    throw ShapeError("omega_combine: " + s.x->value.shape_str() + " vs " + s.r->value.shape_str());
  return add(s.x, s.r);
}

Var chain_forward(std::span<const ChainUnit> units, const Var& x) {
  if (units.empty()) throw ShapeError("chain_forward: empty chain");
  ConnectorState s{x, nullptr};
  for (std::size_t i = 0; i < units.size(); ++i) {
    const bool last = i + 1 == units.size();
    s = connector_apply(units[i].f, last ? ArchWeight::fixed(0) : units[i].connection, s);
  }
  return omega_combine(s);
}

std::vector<std::size_t> layer_assignment(std::span<const int> connections) {
  std::vector<std::size_t> layers(connections.size() + 1, 0);
  for (std::size_t i = 0; i < connections.size(); ++i)
    layers[i + 1] = layers[i] + (connections[i] != 0 ? 1 : 0);
  return layers;
}

}  // namespace tfnas
