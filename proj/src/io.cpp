#include "trajrep/io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace trajrep {

using nlohmann::json;

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path + " for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.precision(17);
  return out;
}

json parse_line(const std::string& line, const std::string& path, int lineno) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
  }
}

// WKT "LINESTRING (lon lat, lon lat, ...)"
std::string to_wkt(const std::vector<GpsPoint>& poly) {
  std::ostringstream out;
  out.precision(17);
  out << "LINESTRING (";
  for (std::size_t i = 0; i < poly.size(); ++i) {
    if (i) out << ", ";
    out << poly[i].lon << " " << poly[i].lat;
  }
  out << ")";
  return out.str();
}

std::vector<GpsPoint> from_wkt(const std::string& wkt) {
  const auto open = wkt.find('(');
  const auto close = wkt.rfind(')');
  if (wkt.compare(0, 10, "LINESTRING") != 0 || open == std::string::npos ||
      close == std::string::npos || close < open) {
    throw std::runtime_error("bad WKT linestring: " + wkt);
  }
  std::vector<GpsPoint> poly;
  std::string body = wkt.substr(open + 1, close - open - 1);
  std::stringstream ss(body);
  std::string pair;
  while (std::getline(ss, pair, ',')) {
    std::istringstream ps(pair);
    GpsPoint p;
    if (!(ps >> p.lon >> p.lat)) throw std::runtime_error("bad WKT coordinate: " + pair);
    poly.push_back(p);
  }
  return poly;
}

// Minimal CSV splitter; only the last field (WKT) may be quoted since it
// contains commas.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<GpsTrajectory> load_gps_file(const std::string& path) {
  auto in = open_in(path);
  std::vector<GpsTrajectory> trajs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = parse_line(line, path, lineno);
    GpsTrajectory t;
    t.id = j.at("id").get<std::string>();
    if (j.contains("label")) t.label = j["label"].get<int>();
    if (j.contains("travel_time")) t.travel_time = j["travel_time"].get<double>();
    if (j.contains("truth_path")) t.truth_path = j["truth_path"].get<std::vector<int>>();
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 3) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": point must be [lon, lat, t]");
      }
      t.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    }
    trajs.push_back(std::move(t));
  }
  return trajs;
}

void save_gps_file(const std::string& path, const std::vector<GpsTrajectory>& trajs) {
  auto out = open_out(path);
  for (const auto& t : trajs) {
    json j;
    j["id"] = t.id;
    if (t.label) j["label"] = *t.label;
    if (t.travel_time) j["travel_time"] = *t.travel_time;
    if (!t.truth_path.empty()) j["truth_path"] = t.truth_path;
    json pts = json::array();
    for (const auto& p : t.points) pts.push_back({p.lon, p.lat, p.t});
    j["points"] = std::move(pts);
    out << j.dump() << "\n";
  }
}

RoadNetwork load_network(const std::string& segments_csv, const std::string& edges_csv) {
  RoadNetwork net;
  {
    auto in = open_in(segments_csv);
    std::string line;
    std::getline(in, line);  // header
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto f = split_csv(line);
      if (f.size() != 9) {
        throw std::runtime_error(segments_csv + ":" + std::to_string(lineno) +
                                 ": expected 9 fields");
      }
      RoadSegment seg;
      seg.id = std::stoi(f[0]);
      seg.length_m = std::stod(f[1]);
      seg.road_type = std::stoi(f[2]);
      seg.maxspeed = std::stod(f[3]);
      seg.avg_travel_time = std::stod(f[4]);
      seg.direction = std::stod(f[5]);
      seg.out_degree = std::stoi(f[6]);
      seg.in_degree = std::stoi(f[7]);
      seg.polyline = from_wkt(f[8]);
      if (seg.id != static_cast<int>(net.segments.size())) {
        throw std::runtime_error(segments_csv + ": segment ids must be dense and ordered");
      }
      if (seg.road_type < 0 || seg.road_type >= kNumRoadTypes) {
        throw std::runtime_error(segments_csv + ":" + std::to_string(lineno) +
                                 ": road_type out of range");
      }
      net.segments.push_back(std::move(seg));
    }
  }
  net.successors.resize(net.segments.size());
  {
    auto in = open_in(edges_csv);
    std::string line;
    std::getline(in, line);  // header
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto f = split_csv(line);
      if (f.size() != 2) {
        throw std::runtime_error(edges_csv + ":" + std::to_string(lineno) + ": expected 2 fields");
      }
      const int from = std::stoi(f[0]), to = std::stoi(f[1]);
      if (from < 0 || from >= net.size() || to < 0 || to >= net.size()) {
        throw std::runtime_error(edges_csv + ":" + std::to_string(lineno) +
                                 ": edge references unknown segment");
      }
      net.successors[static_cast<std::size_t>(from)].push_back(to);
    }
  }
  return net;
}

void save_network(const std::string& segments_csv, const std::string& edges_csv,
                  const RoadNetwork& net) {
  auto segs = open_out(segments_csv);
  segs << "id,length,road_type,maxspeed,avg_travel_time,direction,out_degree,in_degree,polyline\n";
  for (const auto& s : net.segments) {
    segs << s.id << "," << s.length_m << "," << s.road_type << "," << s.maxspeed << ","
         << s.avg_travel_time << "," << s.direction << "," << s.out_degree << "," << s.in_degree
         << ",\"" << to_wkt(s.polyline) << "\"\n";
  }
  auto edges = open_out(edges_csv);
  edges << "from_id,to_id\n";
  for (int i = 0; i < net.size(); ++i) {
    for (int j : net.successors[static_cast<std::size_t>(i)]) edges << i << "," << j << "\n";
  }
}

void save_grid_cache(const std::string& path,
                     const std::map<std::string, std::vector<GridToken>>& cache) {
  auto out = open_out(path);
  for (const auto& [id, toks] : cache) {
    json j;
    j["id"] = id;
    json arr = json::array();
    for (const auto& t : toks) {
      arr.push_back({t.cell_id,
                     t.t,
                     {t.anchor.lon, t.anchor.lat, t.anchor.t},
                     t.feat_x,
                     t.feat_y,
                     t.feat_d,
                     t.feat_r});
    }
    j["tokens"] = std::move(arr);
    out << j.dump() << "\n";
  }
}

std::map<std::string, std::vector<GridToken>> load_grid_cache(const std::string& path) {
  auto in = open_in(path);
  std::map<std::string, std::vector<GridToken>> cache;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = parse_line(line, path, lineno);
    std::vector<GridToken> toks;
    for (const auto& a : j.at("tokens")) {
      GridToken t;
      t.cell_id = a.at(0).get<int>();
      t.t = a.at(1).get<double>();
      t.anchor = {a.at(2).at(0).get<double>(), a.at(2).at(1).get<double>(),
                  a.at(2).at(2).get<double>()};
      t.feat_x = a.at(3).get<double>();
      t.feat_y = a.at(4).get<double>();
      t.feat_d = a.at(5).get<double>();
      t.feat_r = a.at(6).get<double>();
      toks.push_back(t);
    }
    cache[j.at("id").get<std::string>()] = std::move(toks);
  }
  return cache;
}

void save_road_cache(const std::string& path,
                     const std::map<std::string, std::vector<RoadToken>>& cache) {
  auto out = open_out(path);
  for (const auto& [id, toks] : cache) {
    json j;
    j["id"] = id;
    json arr = json::array();
    for (const auto& t : toks) {
      arr.push_back({t.segment_id, t.t, t.minute_of_day, t.day_of_week, t.road_type});
    }
    j["tokens"] = std::move(arr);
    out << j.dump() << "\n";
  }
}

std::map<std::string, std::vector<RoadToken>> load_road_cache(const std::string& path) {
  auto in = open_in(path);
  std::map<std::string, std::vector<RoadToken>> cache;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = parse_line(line, path, lineno);
    std::vector<RoadToken> toks;
    for (const auto& a : j.at("tokens")) {
      RoadToken t;
      t.segment_id = a.at(0).get<int>();
      t.t = a.at(1).get<double>();
      t.minute_of_day = a.at(2).get<int>();
      t.day_of_week = a.at(3).get<int>();
      t.road_type = a.at(4).get<int>();
      toks.push_back(t);
    }
    cache[j.at("id").get<std::string>()] = std::move(toks);
  }
  return cache;
}

void save_loss_csv(const std::string& path, const std::vector<LossRow>& rows) {
  auto out = open_out(path);
  out << "step,epoch,l_cl,l_mlm,l_total,wall_ms\n";
  for (const auto& r : rows) {
    out << r.step << "," << r.epoch << "," << r.l_cl << "," << r.l_mlm << "," << r.l_total << ","
        << r.wall_ms << "\n";
  }
}

std::vector<LossRow> load_loss_csv(const std::string& path) {
  auto in = open_in(path);
  std::vector<LossRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 6) throw std::runtime_error(path + ": expected 6 columns");
    rows.push_back({std::stol(f[0]), std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]),
                    std::stod(f[4]), std::stod(f[5])});
  }
  return rows;
}

void save_metrics(const std::string& path, const std::string& task,
                  const std::map<std::string, double>& metrics, const std::string& config_hash,
                  std::uint64_t seed) {
  auto out = open_out(path);
  json j;
  j["task"] = task;
  j["metrics"] = metrics;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  out << j.dump(2) << "\n";
}

void save_vectors(const std::string& path,
                  const std::vector<std::pair<std::string, std::vector<double>>>& vecs) {
  auto out = open_out(path);
  for (const auto& [id, vec] : vecs) {
    json j;
    j["id"] = id;
    j["vec"] = vec;
    out << j.dump() << "\n";
  }
}

std::vector<std::pair<std::string, std::vector<double>>> load_vectors(const std::string& path) {
  auto in = open_in(path);
  std::vector<std::pair<std::string, std::vector<double>>> vecs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = parse_line(line, path, lineno);
    vecs.emplace_back(j.at("id").get<std::string>(), j.at("vec").get<std::vector<double>>());
  }
  return vecs;
}

}  // namespace trajrep
