#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "balloonseg/annotations.hpp"
#include "balloonseg/image.hpp"
#include "balloonseg/png_io.hpp"
#include "balloonseg/rasterize.hpp"
#include "balloonseg/rng.hpp"
#include "balloonseg/synth.hpp"
#include "balloonseg/tensor.hpp"

namespace bseg {

inline constexpr const char* kAnnotationsFile = "annotations.xml";
inline constexpr const char* kManifestFile = "manifest.tsv";

/// A page resized to the model input: 1x3xHxW image in [0,1] and 1x1xHxW mask.
struct Example {
  std::string page_id;
  std::string book_id;
  Tensor<float> image;
  Tensor<float> mask;
};

inline Example prepare_example(const PageSample& page, std::size_t out_h, std::size_t out_w) {
  if (page.image.empty()) throw std::invalid_argument("page " + page.page_id + " has no image loaded");
  Example ex;
  ex.page_id = page.page_id;
  ex.book_id = page.book_id;
  ex.image = normalize(resize_image(page.image, out_w, out_h));
  ex.mask = rasterize(page.annotations, out_h, out_w, page.image.height, page.image.width);
  return ex;
}

inline std::vector<Example> prepare_examples(const std::vector<PageSample>& pages, std::size_t out_h,
                                             std::size_t out_w) {
  std::vector<Example> out;
  out.reserve(pages.size());
  for (const auto& p : pages) out.push_back(prepare_example(p, out_h, out_w));
  return out;
}

/// Reads annotations.xml and every referenced image under `dir`.
inline std::vector<PageSample> load_corpus(const std::filesystem::path& dir, bool load_images = true) {
  auto pages = read_annotations(dir / kAnnotationsFile);
  if (load_images) {
    for (auto& p : pages) {
      p.image = read_png(dir / p.image_file);
      if (p.image.width != p.width || p.image.height != p.height) {
        throw AnnotationError("page " + p.page_id + ": image is " + std::to_string(p.image.width) + "x" +
                              std::to_string(p.image.height) + " but annotations declare " + std::to_string(p.width) +
                              "x" + std::to_string(p.height));
      }
    }
  }
  return pages;
}

struct SynthCorpusSpec {
  std::size_t pages = 8;
  std::size_t books = 1;
  std::uint64_t seed = 0;
  SynthSpec page{};  // style is replaced per book
};

inline std::string synth_page_id(std::size_t index) {
  std::ostringstream os;
  os << "p" << std::setw(4) << std::setfill('0') << index + 1;
  return os.str();
}

/// Page i belongs to book (i mod books); every page seed is derived from
/// (corpus seed, page id).
inline std::vector<SyntheticPage> synthesize_pages(const SynthCorpusSpec& spec) {
  if (spec.books == 0) throw std::invalid_argument("synthetic corpus needs at least one book");
  std::vector<SyntheticPage> out;
  for (std::size_t i = 0; i < spec.pages; ++i) {
    const std::size_t book = i % spec.books;
    SynthSpec ps = spec.page;
    ps.style = BookStyle::for_book(book, spec.seed);
    const std::string id = synth_page_id(i);
    out.push_back(generate_synthetic_page(ps, derive_seed(spec.seed, id), "b" + std::to_string(book + 1), id));
  }
  return out;
}

/// Writes page PNGs, annotations.xml and manifest.tsv into `dir`.
inline void write_synthetic_corpus(const std::filesystem::path& dir, const SynthCorpusSpec& spec) {
  std::filesystem::create_directories(dir);
  const auto pages = synthesize_pages(spec);
  std::vector<PageSample> samples;
  std::ostringstream manifest;
  manifest << "page_id\tbook\tseed\timage\tballoons\n";
  for (const auto& p : pages) {
    write_png(dir / p.sample.image_file, p.sample.image);
    manifest << p.sample.page_id << '\t' << p.sample.book_id << '\t' << derive_seed(spec.seed, p.sample.page_id) << '\t'
             << p.sample.image_file << '\t' << p.sample.annotations.size() << '\n';
    PageSample s = p.sample;
    s.image = {};
    samples.push_back(std::move(s));
  }
  write_annotations_atomic(dir / kAnnotationsFile, samples);
  std::ofstream os(dir / kManifestFile, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
  os << manifest.str();
}

/// In-memory synthetic corpus, already resized to the model input.
inline std::vector<Example> synthetic_examples(const SynthCorpusSpec& spec, std::size_t out_h, std::size_t out_w) {
  std::vector<Example> out;
  for (const auto& p : synthesize_pages(spec)) out.push_back(prepare_example(p.sample, out_h, out_w));
  return out;
}

}  // namespace bseg
