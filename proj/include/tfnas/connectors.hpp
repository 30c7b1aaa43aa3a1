#pragma once

#include <functional>
#include <span>
#include <vector>

#include "tfnas/components.hpp"

namespace tfnas {

// Main stream X plus the accumulated output R of the layer under
// construction. A null r stands for the zero matrix.
struct ConnectorState {
  Var x;
  Var r;
};

// A component as a unary function. Returning nullptr means "contributes
// nothing" (a dropped component).
using Component = std::function<Var(const Var&)>;

// Psi(f, w)(X, R) = (X + w (f(X) + R), (1 - w) (f(X) + R)).
// w = 0 keeps accumulating the current layer; w = 1 concludes it.
ConnectorState connector_apply(const Component& f, const ArchWeight& w, const ConnectorState& s);

// Omega(X, R) = X + R.
Var omega_combine(const ConnectorState& s);

struct ChainUnit {
  Component f;
  // Ignored for the last unit: Omega closes the chain either way.
  ArchWeight connection = ArchWeight::fixed(0);
};

// (Omega o Psi(f_k, w_k) o ... o Psi(f_1, w_1))(X, 0)
Var chain_forward(std::span<const ChainUnit> units, const Var& x);

// Layer assignment of k chained units under binary connections: unit i goes
// to layer (number of vertical connections among units 0..i-1).
std::vector<std::size_t> layer_assignment(std::span<const int> connections);

}  // namespace tfnas
