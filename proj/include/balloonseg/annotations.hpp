#pragma once

// Annotation XML:
//   <corpus>
//     <page image="FILE" book="ID" w="WIDTH" h="HEIGHT">
//       <balloon id="ID"><pt x="X" y="Y"/>...</balloon>
//     </page>
//   </corpus>
// The page id is the image file name without its extension.

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <atomic>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "balloonseg/image.hpp"

namespace bseg {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

using Polygon = std::vector<Point>;

struct PolygonAnnotation {
  std::string id;
  Polygon vertices;  // implicitly closed
  friend bool operator==(const PolygonAnnotation&, const PolygonAnnotation&) = default;
};

struct PageSample {
  std::string page_id;
  std::string book_id;
  std::string image_file;  // relative to the corpus directory
  std::size_t width = 0;   // source pixel size
  std::size_t height = 0;
  std::vector<PolygonAnnotation> annotations;
  RgbImage image;  // empty until loaded
};

class AnnotationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string page_id_from_image(const std::string& image_file) {
  return std::filesystem::path(image_file).stem().string();
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

// Shortest text that parses back to the same double.
inline std::string format_coord(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename V>
V required_attr(const boost::property_tree::ptree& node, const std::string& name, const std::string& path) {
  auto attr = node.get_child_optional("<xmlattr>." + name);
  if (!attr) throw AnnotationError(path + ": missing attribute '" + name + "'");
  try {
    return attr->get_value<V>();
  } catch (const boost::property_tree::ptree_bad_data&) {
    throw AnnotationError(path + ": attribute '" + name + "' has invalid value '" + attr->data() + "'");
  }
}

}  // namespace detail

/// Parses the annotation XML; one PageSample per <page>, vertex order kept.
inline std::vector<PageSample> parse_annotations(const std::string& xml) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(xml);
    pt::read_xml(is, tree);
  } catch (const pt::xml_parser_error& e) {
    throw AnnotationError("malformed annotation XML: " + std::string(e.what()));
  }
  auto corpus = tree.get_child_optional("corpus");
  if (!corpus) throw AnnotationError("/: root element <corpus> missing");

  std::vector<PageSample> pages;
  std::size_t page_index = 0;
  for (const auto& [tag, page_node] : *corpus) {
    if (tag == "<xmlattr>" || tag == "<xmlcomment>") continue;
    if (tag != "page") throw AnnotationError("/corpus: unexpected element <" + tag + ">");
    ++page_index;
    const std::string path = "/corpus/page[" + std::to_string(page_index) + "]";
    PageSample page;
    page.image_file = detail::required_attr<std::string>(page_node, "image", path);
    if (page.image_file.empty()) throw AnnotationError(path + ": empty image reference");
    page.book_id = detail::required_attr<std::string>(page_node, "book", path);
    page.width = detail::required_attr<std::size_t>(page_node, "w", path);
    page.height = detail::required_attr<std::size_t>(page_node, "h", path);
    page.page_id = page_id_from_image(page.image_file);

    std::size_t balloon_index = 0;
    for (const auto& [btag, balloon_node] : page_node) {
      if (btag == "<xmlattr>" || btag == "<xmlcomment>") continue;
      if (btag != "balloon") throw AnnotationError(path + ": unexpected element <" + btag + ">");
      ++balloon_index;
      const std::string bpath = path + "/balloon[" + std::to_string(balloon_index) + "]";
      PolygonAnnotation ann;
      ann.id = balloon_node.get<std::string>("<xmlattr>.id", "");
      std::size_t pt_index = 0;
      for (const auto& [ptag, pt_node] : balloon_node) {
        if (ptag == "<xmlattr>" || ptag == "<xmlcomment>") continue;
        if (ptag != "pt") throw AnnotationError(bpath + ": unexpected element <" + ptag + ">");
        ++pt_index;
        const std::string ppath = bpath + "/pt[" + std::to_string(pt_index) + "]";
        ann.vertices.push_back({detail::required_attr<double>(pt_node, "x", ppath),
                                detail::required_attr<double>(pt_node, "y", ppath)});
      }
      if (ann.vertices.size() < 3) {
        throw AnnotationError(bpath + ": polygon has " + std::to_string(ann.vertices.size()) +
                              " vertices, at least 3 required");
      }
      page.annotations.push_back(std::move(ann));
    }
    pages.push_back(std::move(page));
  }
  return pages;
}

inline std::string serialize_annotations(const std::vector<PageSample>& pages) {
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<corpus>\n";
  for (const auto& p : pages) {
    os << "  <page image=\"" << detail::xml_escape(p.image_file) << "\" book=\"" << detail::xml_escape(p.book_id)
       << "\" w=\"" << p.width << "\" h=\"" << p.height << "\"";
    if (p.annotations.empty()) {
      os << "/>\n";
      continue;
    }
    os << ">\n";
    for (const auto& a : p.annotations) {
      os << "    <balloon id=\"" << detail::xml_escape(a.id) << "\">";
      for (const auto& v : a.vertices) {
        os << "<pt x=\"" << detail::format_coord(v.x) << "\" y=\"" << detail::format_coord(v.y) << "\"/>";
      }
      os << "</balloon>\n";
    }
    os << "  </page>\n";
  }
  os << "</corpus>\n";
  return os.str();
}

inline std::vector<PageSample> read_annotations(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw AnnotationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_annotations(ss.str());
}

/// Writes to a sibling temp file and renames it over `path`, so readers
/// never observe a partially written file.
inline void write_annotations_atomic(const std::filesystem::path& path, const std::vector<PageSample>& pages) {
  static std::atomic<unsigned long> counter{0};
  const auto tmp = path.string() + ".tmp." + std::to_string(counter.fetch_add(1));
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw AnnotationError("cannot write " + tmp);
    os << serialize_annotations(pages);
    os.flush();
    if (!os) throw AnnotationError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace bseg
