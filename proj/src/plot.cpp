#include <array>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "swinrdm/error.hpp"
#include "swinrdm/pipeline.hpp"

namespace swinrdm::pipeline {

namespace {

// Perceptually ordered anchors sampled from the viridis map.
constexpr std::array<std::array<double, 3>, 6> kAnchors = {{{68, 1, 84},
                                                            {65, 68, 135},
                                                            {42, 120, 142},
                                                            {34, 168, 132},
                                                            {122, 209, 81},
                                                            {253, 231, 37}}};

std::array<png_byte, 3> colour(double x) {
    x = std::clamp(x, 0.0, 1.0) * static_cast<double>(kAnchors.size() - 1);
    const auto i = std::min<size_t>(static_cast<size_t>(x), kAnchors.size() - 2);
    const double f = x - static_cast<double>(i);
    std::array<png_byte, 3> c{};
    for (size_t k = 0; k < 3; ++k) {
        c[k] = static_cast<png_byte>(std::lround(kAnchors[i][k] * (1.0 - f) + kAnchors[i + 1][k] * f));
    }
    return c;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct FileCloser {
    void operator()(FILE* f) const { std::fclose(f); }
};

torch::Tensor field_of(const data::FieldGrid& g, const std::string& variable, const data::VariableCatalog& catalog) {
    if (variable == "ws") return metrics::wind_speed(g, catalog).values[0];
    return g.values[catalog.index(variable)];
}

void write_png(const fs::path& path, const torch::Tensor& field, const PlotMetadata& meta) {
    auto f = field.to(torch::kFloat64).contiguous();
    const volatile int64_t H = f.size(0), W = f.size(1);
    const int64_t scale = std::max<int64_t>(1, (256 + W - 1) / W);
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed while writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W * scale), static_cast<png_uint_32>(H * scale), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    const std::vector<std::pair<std::string, std::string>> entries = {
        {"variable", meta.variable},
        {"method", meta.method},
        {"lead_hours", format_double(meta.lead_hours)},
        {"vmin", format_double(meta.vmin)},
        {"vmax", format_double(meta.vmax)}};
    std::vector<png_text> text(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        text[i].compression = PNG_TEXT_COMPRESSION_NONE;
        text[i].key = const_cast<char*>(entries[i].first.c_str());
        text[i].text = const_cast<char*>(entries[i].second.c_str());
        text[i].text_length = entries[i].second.size();
    }
    png_set_text(png, info, text.data(), static_cast<int>(text.size()));
    png_write_info(png, info);

    auto acc = f.accessor<double, 2>();
    const double span = meta.vmax > meta.vmin ? meta.vmax - meta.vmin : 1.0;
    std::vector<png_byte> row(static_cast<size_t>(W * scale * 3));
    for (int64_t i = 0; i < H; ++i) {
        for (int64_t j = 0; j < W; ++j) {
            const auto c = colour((acc[i][j] - meta.vmin) / span);
            for (int64_t s = 0; s < scale; ++s) {
                std::copy(c.begin(), c.end(), row.begin() + (j * scale + s) * 3);
            }
        }
        for (int64_t s = 0; s < scale; ++s) png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace

std::vector<fs::path> plot_fields(const std::map<std::string, std::vector<data::FieldGrid>>& fields,
                                  const std::vector<data::FieldGrid>& truth, const std::vector<double>& lead_hours,
                                  const std::vector<std::string>& variables, const data::VariableCatalog& catalog,
                                  const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    if (truth.size() != lead_hours.size()) throw ShapeError("plot: one truth grid per lead time");
    for (const auto& [method, grids] : fields) {
        if (grids.size() != lead_hours.size()) throw ShapeError("plot: method '" + method + "' misses lead times");
    }
    std::vector<fs::path> written;
    for (const auto& variable : variables) {
        for (size_t l = 0; l < lead_hours.size(); ++l) {
            // Shared colour range over the truth and every method.
            auto t = field_of(truth[l], variable, catalog);
            double vmin = t.min().item<double>(), vmax = t.max().item<double>();
            for (const auto& [_, grids] : fields) {
                auto v = field_of(grids[l], variable, catalog);
                vmin = std::min(vmin, v.min().item<double>());
                vmax = std::max(vmax, v.max().item<double>());
            }
            for (const auto& [method, grids] : fields) {
                PlotMetadata meta{variable, method, lead_hours[l], vmin, vmax};
                const auto path = out_dir / (variable + "_" + std::to_string(std::llround(lead_hours[l])) + "h_" +
                                             method + ".png");
                write_png(path, field_of(grids[l], variable, catalog), meta);
                written.push_back(path);
            }
        }
    }
    return written;
}

PlotMetadata read_plot_metadata(const fs::path& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed while reading " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_textp text = nullptr;
    int n = 0;
    png_get_text(png, info, &text, &n);
    PlotMetadata meta;
    for (int i = 0; i < n; ++i) {
        const std::string key = text[i].key, value = text[i].text;
        if (key == "variable") meta.variable = value;
        else if (key == "method") meta.method = value;
        else if (key == "lead_hours") meta.lead_hours = std::stod(value);
        else if (key == "vmin") meta.vmin = std::stod(value);
        else if (key == "vmax") meta.vmax = std::stod(value);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return meta;
}

} // namespace swinrdm::pipeline
