#pragma once
// Named trainable parameters. Slot ids are dense indices; GradVec slots and
// Adam moments align with them. Groups carry the learning-rate multiplier
// policy: auxiliary quantities (baselines, control-variate scalings, the
// temperature) train an order of magnitude faster than model weights.

#include <string>
#include <vector>

#include "core.hpp"
#include "tape.hpp"

namespace discgrad {

enum class Group : uint8_t { model, baseline, control };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::model: return "model";
    case Group::baseline: return "baseline";
    case Group::control: return "control";
  }
  return "?";
}

class ParamStore {
 public:
  int add(std::string name, Tensor init, Group g = Group::model) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    groups_.push_back(g);
    return (int)values_.size() - 1;
  }

  size_t size() const { return values_.size(); }
  Tensor& value(int id) { return values_[(size_t)id]; }
  const Tensor& value(int id) const { return values_[(size_t)id]; }
  const std::string& name(int id) const { return names_[(size_t)id]; }
  Group group(int id) const { return groups_[(size_t)id]; }

  std::vector<int> ids_in_group(Group g) const {
    std::vector<int> out;
    for (size_t i = 0; i < groups_.size(); ++i)
      if (groups_[i] == g) out.push_back((int)i);
    return out;
  }

  Value leaf(Tape& t, int id) const { return t.leaf(id, values_[(size_t)id]); }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Group> groups_;
};

}  // namespace discgrad
