#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pshield/error.hpp"
#include "pshield/mdp.hpp"
#include "pshield/reach.hpp"

namespace pshield {

using json = nlohmann::json;

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Validation, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Validation, "cannot write " + path);
  out << text;
}

inline json model_to_json(const Mdp& m) {
  json j;
  j["states"] = m.state_count();
  j["initial"] = m.initial;
  json labels = json::array();
  for (Label l : m.labels) labels.push_back(l == Label::Unsafe ? "unsafe" : "safe");
  j["labels"] = std::move(labels);
  j["rewards"] = m.rewards;
  json actions = json::array();
  for (const auto& acts : m.actions) {
    json per_state = json::array();
    for (const auto& a : acts) {
      json dist = json::array();
      for (const auto& [t, p] : a.dist) dist.push_back(json::array({t, p}));
      per_state.push_back({{"name", a.name}, {"dist", std::move(dist)}});
    }
    actions.push_back(std::move(per_state));
  }
  j["actions"] = std::move(actions);
  return j;
}

inline Mdp model_from_json(const json& j) {
  try {
    Mdp m;
    const auto n = j.at("states").get<std::size_t>();
    m.initial = j.at("initial").get<StateId>();
    const auto& labels = j.at("labels");
    require(labels.size() == n, ErrorCode::Validation, "labels size mismatch");
    for (const auto& l : labels) {
      const auto text = l.get<std::string>();
      require(text == "safe" || text == "unsafe", ErrorCode::Validation, "unknown label " + text);
      m.labels.push_back(text == "unsafe" ? Label::Unsafe : Label::Safe);
    }
    m.rewards = j.at("rewards").get<std::vector<double>>();
    const auto& actions = j.at("actions");
    require(actions.is_array() && actions.size() == n, ErrorCode::Validation,
            "actions size mismatch");
    for (const auto& per_state : actions) {
      std::vector<Action> acts;
      for (const auto& a : per_state) {
        Action act;
        act.name = a.at("name").get<std::string>();
        for (const auto& entry : a.at("dist")) {
          require(entry.is_array() && entry.size() == 2, ErrorCode::Validation,
                  "distribution entry must be [state, prob]");
          act.dist.push_back({entry[0].get<StateId>(), entry[1].get<double>()});
        }
        acts.push_back(std::move(act));
      }
      m.actions.push_back(std::move(acts));
    }
    validate(m);
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::Validation, std::string("malformed model document: ") + e.what());
  }
}

inline Mdp parse_model(const std::string& document) {
  json j;
  try {
    j = json::parse(document);
  } catch (const json::exception& e) {
    fail(ErrorCode::Validation, std::string("malformed model document: ") + e.what());
  }
  return model_from_json(j);
}

inline std::string serialize_model(const Mdp& m) { return model_to_json(m).dump(1); }

inline Mdp load_model(const std::string& path) { return parse_model(read_text_file(path)); }

inline json certificate_to_json(const SafetyCertificate& c) {
  return {{"epsilon", c.epsilon},     {"beta", c.beta},           {"lower", c.lower},
          {"zero_states", c.zero_states}, {"inductive", c.inductive}, {"iterations", c.iterations}};
}

inline SafetyCertificate certificate_from_json(const json& j) {
  try {
    SafetyCertificate c;
    c.epsilon = j.at("epsilon").get<double>();
    c.beta = j.at("beta").get<ValueVector>();
    c.lower = j.value("lower", ValueVector{});
    c.zero_states = j.value("zero_states", std::vector<StateId>{});
    c.inductive = j.at("inductive").get<bool>();
    c.iterations = j.value("iterations", std::size_t{0});
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::Validation, std::string("malformed certificate: ") + e.what());
  }
}

inline SafetyCertificate load_certificate(const std::string& path) {
  try {
    return certificate_from_json(json::parse(read_text_file(path)));
  } catch (const json::exception& e) {
    fail(ErrorCode::Validation, std::string("malformed certificate: ") + e.what());
  }
}

}  // namespace pshield
