#include "ttlab/losses.hpp"

#include "ttlab/errors.hpp"

namespace ttlab {

std::string loss_name(LossKind k) {
  switch (k) {
    case LossKind::ce: return "ce";
    case LossKind::logit: return "logit";
    case LossKind::cw: return "cw";
    case LossKind::po_trip: return "po_trip";
  }
  throw UsageError("unknown loss kind");
}

LossKind parse_loss(const std::string& name) {
  if (name == "ce") return LossKind::ce;
  if (name == "logit") return LossKind::logit;
  if (name == "cw") return LossKind::cw;
  if (name == "po_trip") return LossKind::po_trip;
  throw UsageError("unknown loss '" + name + "', expected ce, logit, cw or po_trip");
}

int append_loss(Graph& g, int logits, const LossSpec& spec, int target,
                int original) {
  switch (spec.kind) {
    case LossKind::ce:
      return g.add_loss_ce(logits, target);
    case LossKind::logit:
      return g.add_loss_logit(logits, target);
    case LossKind::cw:
      return g.add_loss_cw(logits, target, spec.cw_k);
    case LossKind::po_trip:
      return g.add_loss_po_trip(logits, target, original, spec.po_lambda,
                                spec.trip_gamma, spec.xi);
  }
  throw UsageError("unknown loss kind");
}

LossEval loss_value_and_grad(const std::vector<float>& logits,
                             const LossSpec& spec, int target, int original) {
  Graph g;
  int in = g.add_input({static_cast<int>(logits.size())});
  int loss = append_loss(g, in, spec, target, original);
  g.node(in).val.data = logits;
  g.set_grad_targets({in});
  g.forward();
  g.backward(loss);
  LossEval out;
  out.value = g.val(loss).data[0];
  out.grad = g.grad(in);
  return out;
}

}  // namespace ttlab
