#include "ssgp/kernel_json.hpp"

#include "ssgp/error.hpp"
#include "ssgp/io.hpp"

namespace ssgp {

namespace {

double number(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing field '" + key + "'");
  if (!j[key].is_number()) throw ConfigError(where + ": field '" + key + "' must be a number");
  return j[key].get<double>();
}

std::vector<KernelExpr> terms(const nlohmann::json& j, const std::filesystem::path& dir, const std::string& where) {
  if (!j.contains("terms") || !j["terms"].is_array() || j["terms"].empty())
    throw ConfigError(where + ": 'terms' must be a non-empty array");
  std::vector<KernelExpr> out;
  for (std::size_t i = 0; i < j["terms"].size(); ++i) out.push_back(kernel_from_json(j["terms"][i], dir));
  return out;
}

ScaleTable scale_table(const nlohmann::json& j, const std::filesystem::path& dir, const std::string& where) {
  if (!j.contains("scale_table")) throw ConfigError(where + ": missing field 'scale_table'");
  const auto& s = j["scale_table"];
  const int axis = j.value("axis", 0);
  if (s.is_string()) {
    std::filesystem::path p = s.get<std::string>();
    if (p.is_relative() && !dir.empty()) p = dir / p;
    if (!std::filesystem::exists(p)) throw ConfigError(where + ": scale_table file not found: " + p.string());
    const io::CsvTable t = io::read_csv(p);
    const std::size_t cx = t.column("x"), cv = t.column("value");
    std::vector<double> x, v;
    for (const auto& r : t.rows) {
      x.push_back(io::parse_double(r[cx], p.string()));
      v.push_back(io::parse_double(r[cv], p.string()));
    }
    return ScaleTable(std::move(x), std::move(v), axis);
  }
  if (s.is_object() && s.contains("x") && s.contains("value"))
    return ScaleTable(s["x"].get<std::vector<double>>(), s["value"].get<std::vector<double>>(), s.value("axis", axis));
  throw ConfigError(where + ": 'scale_table' must be a CSV path or an {x, value} object");
}

}  // namespace

KernelExpr kernel_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
    throw ConfigError("kernel: expected an object with a string 'type'");
  const std::string type = j["type"].get<std::string>();
  const std::string where = "kernel '" + type + "'";
  try {
    if (type == "matern") return KernelExpr::matern(number(j, "nu", where), number(j, "length", where), number(j, "variance", where));
    if (type == "squared_exp") return KernelExpr::squared_exp(number(j, "length", where), number(j, "variance", where));
    if (type == "periodic")
      return KernelExpr::periodic(number(j, "period", where), number(j, "length", where), number(j, "variance", where));
    if (type == "white_noise") return KernelExpr::white_noise(number(j, "variance", where));
    if (type == "constant") return KernelExpr::constant(number(j, "variance", where));
    if (type == "sum") return KernelExpr::sum(terms(j, base_dir, where));
    if (type == "product") return KernelExpr::product(terms(j, base_dir, where));
    if (type == "mean_scaled") {
      if (!j.contains("base")) throw ConfigError(where + ": missing field 'base'");
      return KernelExpr::mean_scaled(kernel_from_json(j["base"], base_dir), scale_table(j, base_dir, where),
                                     number(j, "beta", where));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  throw ConfigError("kernel: unknown type '" + type + "'");
}

nlohmann::json kernel_to_json(const KernelExpr& kernel) {
  using nlohmann::json;
  struct Visitor {
    json operator()(const kern::Matern& k) const {
      return {{"type", "matern"}, {"nu", nu_value(k.nu)}, {"length", k.length}, {"variance", k.variance}};
    }
    json operator()(const kern::SquaredExp& k) const {
      return {{"type", "squared_exp"}, {"length", k.length}, {"variance", k.variance}};
    }
    json operator()(const kern::Periodic& k) const {
      return {{"type", "periodic"}, {"period", k.period}, {"length", k.length}, {"variance", k.variance}};
    }
    json operator()(const kern::WhiteNoise& k) const { return {{"type", "white_noise"}, {"variance", k.variance}}; }
    json operator()(const kern::Constant& k) const { return {{"type", "constant"}, {"variance", k.variance}}; }
    json operator()(const kern::Sum& k) const {
      json t = json::array();
      for (const auto& x : k.terms) t.push_back(kernel_to_json(x));
      return {{"type", "sum"}, {"terms", t}};
    }
    json operator()(const kern::Product& k) const {
      json t = json::array();
      for (const auto& x : k.terms) t.push_back(kernel_to_json(x));
      return {{"type", "product"}, {"terms", t}};
    }
    json operator()(const kern::MeanScaled& k) const {
      return {{"type", "mean_scaled"},
              {"beta", k.beta},
              {"base", kernel_to_json(*k.base)},
              {"scale_table", {{"x", k.mean.abscissae()}, {"value", k.mean.values()}, {"axis", k.mean.axis()}}}};
    }
  };
  return std::visit(Visitor{}, kernel.node());
}

}  // namespace ssgp
