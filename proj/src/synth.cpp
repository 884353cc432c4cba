#include <set>

#include "mwp/data.hpp"

namespace mwp {

namespace {

std::string substitute(const std::string& pattern, const std::vector<long long>& values,
                       const std::string& tmpl_name) {
  std::string out;
  size_t i = 0;
  while (i < pattern.size()) {
    if (pattern[i] == '{') {
      size_t close = pattern.find('}', i);
      if (close == std::string::npos || pattern[i + 1] != 'q')
        throw DataError("invalid template " + tmpl_name + ": bad placeholder in '" + pattern + "'");
      int idx = std::stoi(pattern.substr(i + 2, close - i - 2));
      if (idx < 0 || static_cast<size_t>(idx) >= values.size())
        throw DataError("invalid template " + tmpl_name + ": placeholder {q" +
                        std::to_string(idx) + "} out of range");
      out += std::to_string(values[static_cast<size_t>(idx)]);
      i = close + 1;
      continue;
    }
    out += pattern[i++];
  }
  return out;
}

int count_placeholder(const std::string& pattern, int idx) {
  std::string needle = "{q" + std::to_string(idx) + "}";
  int n = 0;
  size_t pos = 0;
  while ((pos = pattern.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

void validate(const SynthTemplate& t) {
  if (t.quantity_count <= 0 || !t.sampler || t.variants.size() < 2)
    throw DataError("invalid template " + t.name);
  for (int qi = 0; qi < t.quantity_count; ++qi) {
    if (count_placeholder(t.context_pattern, qi) != 1)
      throw DataError("invalid template " + t.name + ": context must mention {q" +
                      std::to_string(qi) + "} exactly once");
  }
  for (const auto& v : t.variants) {
    if (v.question_pattern.find("{q") != std::string::npos)
      throw DataError("invalid template " + t.name + ": questions must not carry quantities");
    if (v.gold_pattern.empty()) throw DataError("invalid template " + t.name + ": empty gold");
  }
}

std::vector<long long> draw_distinct(std::mt19937_64& rng,
                                     const std::vector<std::pair<int, int>>& ranges) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<long long> vals;
    std::set<long long> seen;
    bool ok = true;
    for (const auto& [lo, hi] : ranges) {
      long long v = std::uniform_int_distribution<long long>(lo, hi)(rng);
      if (!seen.insert(v).second) {
        ok = false;
        break;
      }
      vals.push_back(v);
    }
    if (ok) return vals;
  }
  throw DataError("synth sampler failed to draw distinct values");
}

SynthTemplate area_template(const std::string& noun, const std::string& unit) {
  SynthTemplate t;
  t.name = "area-" + noun;
  std::string n = noun, u = unit;
  t.context_pattern = "The " + n + " was originally {q0} " + u + " long and {q1} " + u +
                      " wide . Later the length was increased by {q2} " + u +
                      " and the width was increased by {q3} " + u + " .";
  t.variants = {
      {"How many " + u + " long was the " + n + " at first ?", "{q0}"},
      {"How many times the length of the original " + n + " was the width ?", "{q0}/{q1}"},
      {"How many square " + u + " was the original " + n + " area ?", "{q0}*{q1}"},
      {"How many square " + u + " is the current " + n + " area ?",
       "({q0}+{q2})*({q1}+{q3})"},
      {"How many square " + u + " are increased by the current " + n +
           " area compared to the original one ?",
       "({q0}+{q2})*({q1}+{q3})-({q0}*{q1})"},
      {"How many " + u + " was the perimeter of the original " + n + " ?", "2*({q0}+{q1})"},
  };
  t.quantity_count = 4;
  t.sampler = [](std::mt19937_64& rng) {
    return draw_distinct(rng, {{21, 90}, {8, 20}, {3, 19}, {3, 19}});
  };
  return t;
}

SynthTemplate commerce_template(const std::string& shop, const std::string& item,
                                const std::string& name) {
  SynthTemplate t;
  t.name = "commerce-" + item;
  t.context_pattern = "The " + shop + " had many " + item + " for sale . Each " + item +
                      " cost {q0} coins . " + name + " bought {q1} " + item +
                      " and handed over {q2} coins at the counter .";
  t.variants = {
      {"How many " + item + " did " + name + " buy ?", "{q1}"},
      {"How many coins did the " + item + " cost altogether ?", "{q0}*{q1}"},
      {"How many coins did " + name + " get back as change ?", "{q2}-{q0}*{q1}"},
      {"If the handed coins were shared equally among the " + item +
           " , how many coins would each " + item + " account for ?",
       "{q2}/{q1}"},
  };
  t.quantity_count = 3;
  t.sampler = [](std::mt19937_64& rng) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      auto v = draw_distinct(rng, {{3, 9}, {4, 12}, {0, 0}});
      long long paid = v[0] * v[1] + std::uniform_int_distribution<long long>(1, 25)(rng);
      if (paid == v[0] || paid == v[1]) continue;
      v[2] = paid;
      return v;
    }
    throw DataError("synth sampler failed");
  };
  return t;
}

}  // namespace

std::vector<SynthTemplate> default_templates() {
  return {
      area_template("playground", "meters"),
      area_template("garden", "meters"),
      area_template("basketball court", "meters"),
      area_template("corn field", "meters"),
      area_template("poster", "centimeters"),
      area_template("photo frame", "centimeters"),
      commerce_template("store", "pencils", "Tom"),
      commerce_template("market", "apples", "Mia"),
  };
}

std::vector<ProblemInstance> synth_generate(const std::vector<SynthTemplate>& templates,
                                            int count, uint64_t seed) {
  if (templates.empty()) throw DataError("invalid template: none given");
  for (const SynthTemplate& t : templates) validate(t);
  std::vector<ProblemInstance> out;
  if (count <= 0) return out;
  std::mt19937_64 rng(seed);
  int group = 0;
  while (static_cast<int>(out.size()) < count) {
    const SynthTemplate& t = templates[static_cast<size_t>(group) % templates.size()];
    std::vector<long long> values = t.sampler(rng);
    if (static_cast<int>(values.size()) != t.quantity_count)
      throw DataError("invalid template " + t.name + ": sampler arity mismatch");
    std::string context = substitute(t.context_pattern, values, t.name);
    for (size_t vi = 0; vi < t.variants.size(); ++vi) {
      std::string id =
          "synth-" + t.name + "-g" + std::to_string(group) + "-v" + std::to_string(vi);
      out.push_back(make_instance(id, context, substitute(t.variants[vi].question_pattern,
                                                          values, t.name),
                                  substitute(t.variants[vi].gold_pattern, values, t.name)));
    }
    ++group;
  }
  return out;
}

}  // namespace mwp
