#pragma once

// HTTP review loop: per-page predictions, annotation edits and acceptance of
// detections as ground truth. Link with Threads::Threads.

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "balloonseg/annotations.hpp"
#include "balloonseg/dataset.hpp"
#include "balloonseg/image.hpp"
#include "balloonseg/model.hpp"
#include "balloonseg/overlay.hpp"
#include "balloonseg/png_io.hpp"
#include "balloonseg/rng.hpp"
#include "balloonseg/vectorize.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen's headers.
#include <httplib.h>

namespace bseg {

inline constexpr const char* kSessionFile = "review_state.json";

enum class PageStatus { Unreviewed, Accepted, Corrected };

inline std::string to_string(PageStatus s) {
  switch (s) {
    case PageStatus::Accepted: return "accepted";
    case PageStatus::Corrected: return "corrected";
    default: return "unreviewed";
  }
}

inline PageStatus parse_status(const std::string& s) {
  if (s == "unreviewed") return PageStatus::Unreviewed;
  if (s == "accepted") return PageStatus::Accepted;
  if (s == "corrected") return PageStatus::Corrected;
  throw std::invalid_argument("unknown page status '" + s + "'");
}

/// Content replaced by a temp-file write plus rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  static std::atomic<unsigned long> counter{0};
  const auto tmp = path.string() + ".tmp." + std::to_string(counter.fetch_add(1));
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    os << content;
    os.flush();
    if (!os) throw std::runtime_error("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Hex digest (FNV-1a, 64 bit) of a file's bytes.
inline std::string file_hash(const std::filesystem::path& path) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(read_file(path));
  return os.str();
}

struct ReviewOptions {
  std::filesystem::path dataset_dir;
  std::optional<std::filesystem::path> weights;
  ModelConfig model{};
  DetectConfig detect{};
  double overlay_alpha = 0.5;
  /// Vertices may lie up to this fraction of the page size outside the page.
  double bounds_margin = 0.1;
};

/// A rendered HTTP answer, independent of the transport.
struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

class ReviewService {
 public:
  explicit ReviewService(ReviewOptions opts) : opts_(std::move(opts)) {
    const auto xml = opts_.dataset_dir / kAnnotationsFile;
    if (std::filesystem::exists(xml)) pages_ = read_annotations(xml);
    std::sort(pages_.begin(), pages_.end(),
              [](const PageSample& a, const PageSample& b) { return a.page_id < b.page_id; });
    for (std::size_t i = 0; i < pages_.size(); ++i) {
      if (!index_.emplace(pages_[i].page_id, i).second) {
        throw AnnotationError("duplicate page id " + pages_[i].page_id);
      }
      status_[pages_[i].page_id] = PageStatus::Unreviewed;
    }
    load_session();
    if (opts_.weights) {
      net_ = std::make_unique<Network<float>>(opts_.model);
      net_->load_weights(*opts_.weights);
      weights_hash_ = file_hash(*opts_.weights);
    }
  }

  bool has_weights() const { return net_ != nullptr; }
  const std::string& weights_hash() const { return weights_hash_; }

  PageStatus status(const std::string& id) const {
    std::shared_lock lock(state_mutex_);
    return status_.at(id);
  }

  std::size_t cache_size() const {
    std::shared_lock lock(cache_mutex_);
    return cache_.size();
  }

  Reply list_pages() const {
    std::shared_lock lock(state_mutex_);
    auto arr = nlohmann::json::array();
    for (const auto& p : pages_) {
      arr.push_back({{"id", p.page_id},
                     {"book", p.book_id},
                     {"status", to_string(status_.at(p.page_id))},
                     {"width", p.width},
                     {"height", p.height}});
    }
    return json_reply(200, {{"pages", arr}});
  }

  Reply get_prediction(const std::string& id, std::optional<double> threshold = std::nullopt) {
    if (auto err = check_page(id)) return *err;
    if (!net_) return error(409, "no weights loaded");
    const double t = threshold.value_or(opts_.detect.threshold);
    if (!(t > 0.0 && t < 1.0)) return error(400, "threshold must lie in (0,1)");
    bool hit = false;
    const auto entry = predict_cached(id, t, &hit);
    auto j = entry->json;
    j["cached"] = hit;
    return json_reply(200, j);
  }

  Reply precompute(std::optional<double> threshold = std::nullopt) {
    if (!net_) return error(409, "no weights loaded");
    const double t = threshold.value_or(opts_.detect.threshold);
    if (!(t > 0.0 && t < 1.0)) return error(400, "threshold must lie in (0,1)");
    std::size_t computed = 0, cached = 0;
    for (const auto& id : page_ids()) {
      bool hit = false;
      predict_cached(id, t, &hit);
      ++(hit ? cached : computed);
    }
    return json_reply(200, {{"computed", computed}, {"cached", cached}, {"threshold", t}});
  }

  Reply get_annotations(const std::string& id) const {
    if (auto err = check_page(id)) return *err;
    std::shared_lock lock(state_mutex_);
    return json_reply(200, annotations_json(pages_[index_.at(id)]));
  }

  /// Replaces the page's ground truth with the posted polygons.
  /// Body: {"polygons": [{"id"?: str, "vertices": [[x, y], ...]}, ...]}.
  Reply post_annotations(const std::string& id, const std::string& body) {
    if (auto err = check_page(id)) return *err;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("polygons") || !j["polygons"].is_array()) {
      return error(400, "body must be an object with a 'polygons' array");
    }
    const PageSample& meta = pages_[index_.at(id)];
    std::vector<PolygonAnnotation> polys;
    for (std::size_t pi = 0; pi < j["polygons"].size(); ++pi) {
      const auto& pj = j["polygons"][pi];
      const nlohmann::json* verts = pj.is_array() ? &pj : (pj.is_object() && pj.contains("vertices") ? &pj["vertices"] : nullptr);
      if (!verts || !verts->is_array()) return invalid_polygon(pi, std::nullopt, "polygon needs a 'vertices' array");
      if (verts->size() < 3) return invalid_polygon(pi, std::nullopt, "polygon needs at least 3 vertices");
      PolygonAnnotation a;
      a.id = pj.is_object() && pj.contains("id") && pj["id"].is_string() ? pj["id"].get<std::string>()
                                                                        : id + "_e" + std::to_string(pi + 1);
      for (std::size_t vi = 0; vi < verts->size(); ++vi) {
        const auto& v = (*verts)[vi];
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
          return invalid_polygon(pi, vi, "vertex must be [x, y]");
        }
        const Point p{v[0].get<double>(), v[1].get<double>()};
        if (!in_bounds(p, meta)) return invalid_polygon(pi, vi, "vertex outside the allowed page bounds");
        a.vertices.push_back(p);
      }
      polys.push_back(std::move(a));
    }
    return store(id, std::move(polys), PageStatus::Corrected);
  }

  /// Copies the page's current detections into its ground truth.
  Reply accept(const std::string& id, std::optional<double> threshold = std::nullopt) {
    if (auto err = check_page(id)) return *err;
    if (!net_) return error(409, "no weights loaded");
    const double t = threshold.value_or(opts_.detect.threshold);
    if (!(t > 0.0 && t < 1.0)) return error(400, "threshold must lie in (0,1)");
    const auto entry = predict_cached(id, t, nullptr);
    return store(id, entry->annotations, PageStatus::Accepted);
  }

  /// The page image file, unmodified.
  Reply get_image(const std::string& id) const {
    if (auto err = check_page(id)) return *err;
    try {
      return {200, read_file(image_path(id)), "image/png"};
    } catch (const std::exception& e) {
      return error(500, e.what());
    }
  }

  Reply get_overlay(const std::string& id) {
    if (auto err = check_page(id)) return *err;
    if (!net_) return error(409, "no weights loaded");
    const auto entry = predict_cached(id, opts_.detect.threshold, nullptr);
    const RgbImage page = read_png(image_path(id));
    return {200, encode_png(render_overlay(page, entry->probabilities, opts_.overlay_alpha)), "image/png"};
  }

  /// Registers all routes on `server`.
  void bind(httplib::Server& server) {
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    auto guarded = [this, send](auto fn) {
      return [this, send, fn](const httplib::Request& req, httplib::Response& res) {
        try {
          send(res, fn(req));
        } catch (const std::exception& e) {
          send(res, error(500, e.what()));
        }
      };
    };
    auto threshold_of = [](const httplib::Request& req) -> std::optional<double> {
      if (!req.has_param("threshold")) return std::nullopt;
      try {
        return std::stod(req.get_param_value("threshold"));
      } catch (const std::exception&) {
        return std::nan("");
      }
    };
    server.Get("/pages", guarded([this](const httplib::Request&) { return list_pages(); }));
    server.Get(R"(/pages/([^/]+)/prediction)", guarded([this, threshold_of](const httplib::Request& r) {
                 return get_prediction(r.matches[1], threshold_of(r));
               }));
    server.Post("/precompute",
                guarded([this, threshold_of](const httplib::Request& r) { return precompute(threshold_of(r)); }));
    server.Get(R"(/pages/([^/]+)/annotations)",
               guarded([this](const httplib::Request& r) { return get_annotations(r.matches[1]); }));
    server.Post(R"(/pages/([^/]+)/annotations)",
                guarded([this](const httplib::Request& r) { return post_annotations(r.matches[1], r.body); }));
    server.Post(R"(/pages/([^/]+)/accept)", guarded([this, threshold_of](const httplib::Request& r) {
                  return accept(r.matches[1], threshold_of(r));
                }));
    server.Get(R"(/pages/([^/]+)/image)", guarded([this](const httplib::Request& r) { return get_image(r.matches[1]); }));
    server.Get(R"(/pages/([^/]+)/overlay)",
               guarded([this](const httplib::Request& r) { return get_overlay(r.matches[1]); }));
  }

 private:
  struct CacheEntry {
    nlohmann::json json;
    std::vector<PolygonAnnotation> annotations;  // source-image coordinates
    Tensor<float> probabilities;                 // model raster
  };
  using CacheKey = std::tuple<std::string, std::string, double>;

  static Reply json_reply(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json"}; }
  static Reply error(int status, const std::string& msg) { return json_reply(status, {{"error", msg}}); }

  static Reply invalid_polygon(std::size_t polygon, std::optional<std::size_t> vertex, const std::string& msg) {
    nlohmann::json j{{"error", msg}, {"polygon", polygon}};
    j["vertex"] = vertex ? nlohmann::json(*vertex) : nlohmann::json(nullptr);
    return json_reply(400, j);
  }

  std::optional<Reply> check_page(const std::string& id) const {
    if (!index_.count(id)) return error(404, "unknown page '" + id + "'");
    return std::nullopt;
  }

  std::vector<std::string> page_ids() const {
    std::vector<std::string> ids;
    for (const auto& p : pages_) ids.push_back(p.page_id);
    return ids;
  }

  std::filesystem::path image_path(const std::string& id) const {
    return opts_.dataset_dir / pages_[index_.at(id)].image_file;
  }

  bool in_bounds(const Point& p, const PageSample& meta) const {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) return false;
    const double mx = opts_.bounds_margin * static_cast<double>(meta.width);
    const double my = opts_.bounds_margin * static_cast<double>(meta.height);
    return p.x >= -mx && p.x <= static_cast<double>(meta.width) + mx && p.y >= -my &&
           p.y <= static_cast<double>(meta.height) + my;
  }

  static nlohmann::json annotations_json(const PageSample& p) {
    auto arr = nlohmann::json::array();
    for (const auto& a : p.annotations) arr.push_back({{"id", a.id}, {"vertices", polygon_json(a.vertices)}});
    return {{"page_id", p.page_id}, {"polygons", arr}};
  }

  std::shared_ptr<const CacheEntry> predict_cached(const std::string& id, double threshold, bool* hit) {
    const CacheKey key{weights_hash_, id, threshold};
    {
      std::shared_lock lock(cache_mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) {
        if (hit) *hit = true;
        return it->second;
      }
    }
    if (hit) *hit = false;
    const PageSample& meta = pages_[index_.at(id)];
    const RgbImage page = read_png(image_path(id));
    const auto& cfg = opts_.model;
    auto entry = std::make_shared<CacheEntry>();
    entry->probabilities = net_->predict(normalize(resize_image(page, cfg.input_w, cfg.input_h)));
    DetectConfig dc = opts_.detect;
    dc.threshold = threshold;
    const auto dets = detect(entry->probabilities, dc);
    const double sx = static_cast<double>(page.width) / static_cast<double>(cfg.input_w);
    const double sy = static_cast<double>(page.height) / static_cast<double>(cfg.input_h);
    entry->annotations = to_annotations(dets, meta.page_id, sx, sy);
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < dets.size(); ++i) {
      arr.push_back({{"id", entry->annotations[i].id},
                     {"confidence", dets[i].mean_confidence},
                     {"area", dets[i].area},
                     {"vertices", polygon_json(entry->annotations[i].vertices)}});
    }
    entry->json = {{"page_id", id}, {"threshold", threshold}, {"weights_hash", weights_hash_}, {"detections", arr}};
    std::unique_lock lock(cache_mutex_);
    return cache_.emplace(key, std::move(entry)).first->second;
  }

  Reply store(const std::string& id, std::vector<PolygonAnnotation> polys, PageStatus new_status) {
    std::unique_lock lock(state_mutex_);
    PageSample& page = pages_[index_.at(id)];
    auto previous = page.annotations;
    const auto previous_status = status_[id];
    page.annotations = std::move(polys);
    status_[id] = new_status;
    try {
      write_annotations_atomic(opts_.dataset_dir / kAnnotationsFile, pages_);
      save_session();
    } catch (const std::exception& e) {
      page.annotations = std::move(previous);
      status_[id] = previous_status;
      return error(500, e.what());
    }
    auto j = annotations_json(page);
    j["status"] = to_string(new_status);
    return json_reply(200, j);
  }

  void load_session() {
    const auto path = opts_.dataset_dir / kSessionFile;
    if (!std::filesystem::exists(path)) return;
    const auto j = nlohmann::json::parse(read_file(path));
    for (const auto& [id, s] : j.at("pages").items()) {
      if (status_.count(id)) status_[id] = parse_status(s.get<std::string>());
    }
  }

  void save_session() const {
    nlohmann::json pages = nlohmann::json::object();
    for (const auto& [id, s] : status_) {
      if (s != PageStatus::Unreviewed) pages[id] = to_string(s);
    }
    write_file_atomic(opts_.dataset_dir / kSessionFile, nlohmann::json{{"pages", pages}}.dump(2) + "\n");
  }

  ReviewOptions opts_;
  std::vector<PageSample> pages_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, PageStatus> status_;
  mutable std::shared_mutex state_mutex_;

  std::unique_ptr<Network<float>> net_;
  std::string weights_hash_;
  std::map<CacheKey, std::shared_ptr<const CacheEntry>> cache_;
  mutable std::shared_mutex cache_mutex_;
};

}  // namespace bseg
