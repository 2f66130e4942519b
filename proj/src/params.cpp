#include "dlcm/params.hpp"

namespace dlcm {

int ParamStore::add(const std::string& name, Index rows, Index cols, ParamKind kind, bool decay) {
  if (index_.count(name) > 0) throw ConfigError("param '" + name + "' registered twice");
  ParamEntry e;
  e.name = name;
  e.value = Matrix::Zero(rows, cols);
  e.kind = kind;
  e.decay = decay;
  entries_.push_back(std::move(e));
  const int idx = static_cast<int>(entries_.size()) - 1;
  index_.emplace(name, idx);
  return idx;
}

ParamEntry& ParamStore::by_name(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown param '" + name + "'");
  return entries_[static_cast<std::size_t>(it->second)];
}

const ParamEntry& ParamStore::by_name(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown param '" + name + "'");
  return entries_[static_cast<std::size_t>(it->second)];
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const ParamEntry& e : entries_) out.push_back(e.name);
  return out;
}

void ParamBinding::accumulate_grads(std::vector<Matrix>& grads) const {
  if (grads.size() != vars_.size()) grads.resize(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (!vars_[i].valid()) continue;
    const Matrix g = tape_->gradient(vars_[i]);
    if (grads[i].size() == 0) {
      grads[i] = g;
    } else {
      grads[i] += g;
    }
  }
}

}  // namespace dlcm
