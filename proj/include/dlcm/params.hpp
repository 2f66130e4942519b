#pragma once

#include "dlcm/autograd.hpp"
#include "dlcm/common.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace dlcm {

/// Width class a parameter's input derives from; drives its group in the
/// width-scaling plan (token-hidden, concept-hidden, embeddings+biases).
enum class ParamKind { HiddenToken, HiddenConcept, Embedding, GainOrBias };

struct ParamEntry {
  std::string name;
  Matrix value;
  ParamKind kind = ParamKind::GainOrBias;
  bool decay = false;  // weight decay applies to matrices only
  Matrix adam_m;       // optimizer moments, lazily sized
  Matrix adam_v;
};

class ParamStore {
 public:
  int add(const std::string& name, Index rows, Index cols, ParamKind kind, bool decay);
  ParamEntry& at(int idx) { return entries_[static_cast<std::size_t>(idx)]; }
  const ParamEntry& at(int idx) const { return entries_[static_cast<std::size_t>(idx)]; }
  ParamEntry& by_name(const std::string& name);
  const ParamEntry& by_name(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  int size() const { return static_cast<int>(entries_.size()); }
  std::vector<std::string> names() const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, int> index_;
};

/// Binds store parameters to tape leaves for one forward pass, memoized per
/// parameter so each value is copied onto the tape at most once.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParamStore& store, bool needs_grad = true)
      : tape_(&tape), store_(&store), vars_(static_cast<std::size_t>(store.size())),
        needs_grad_(needs_grad) {}

  Var operator[](int idx) {
    Var& v = vars_[static_cast<std::size_t>(idx)];
    if (!v.valid()) v = tape_->input(store_->at(idx).value, needs_grad_);
    return v;
  }

  /// Adds d(root)/d(param) into grads[idx] for every bound parameter
  /// (grads[idx] must be pre-sized or empty).
  void accumulate_grads(std::vector<Matrix>& grads) const;

 private:
  Tape* tape_;
  const ParamStore* store_;
  std::vector<Var> vars_;
  bool needs_grad_;
};

}  // namespace dlcm
