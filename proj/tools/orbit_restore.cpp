// orbit-restore: end-to-end CLI for the space-image enhancement pipeline.
// Subcommands: degrade, train, enhance, evaluate, grid.
// Exit codes: 0 success, 2 usage/config errors, 1 runtime errors.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "orbit/degrade.hpp"
#include "orbit/evaluate.hpp"
#include "orbit/image_io.hpp"
#include "orbit/model.hpp"
#include "orbit/run_config.hpp"
#include "orbit/trainer.hpp"

namespace fs = std::filesystem;

namespace {

orbit::RunConfig load_config(const std::string& path) {
    if (path.empty()) return orbit::RunConfig{};
    return orbit::RunConfig::from_file(path);
}

void echo_resolved_config(const orbit::RunConfig& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    orbit::write_json_file(out_dir / "resolved_config.json", cfg.to_json());
}

int cmd_degrade(const std::string& config_path, const std::string& clean_dir, const std::string& out_dir) {
    orbit::RunConfig cfg = load_config(config_path);
    const fs::path clean = clean_dir.empty() ? fs::path(cfg.paths.clean_dir.value_or("")) : fs::path(clean_dir);
    const fs::path out = out_dir.empty() ? fs::path(cfg.paths.out_dir.value_or("")) : fs::path(out_dir);
    if (clean.empty()) throw orbit::ConfigError("degrade: --clean-dir (or paths.clean_dir) is required");
    if (out.empty()) throw orbit::ConfigError("degrade: --out-dir (or paths.out_dir) is required");

    cfg.paths.clean_dir = clean.string();
    cfg.paths.out_dir = out.string();
    echo_resolved_config(cfg, out);

    const orbit::DatasetManifest manifest = orbit::build_dataset(clean, out, cfg.degrade);
    std::cout << "wrote " << manifest.pairs.size() << " degraded/target pairs to " << out.string() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& manifest_path, const std::string& out_dir,
              const std::string& resume_dir) {
    orbit::RunConfig cfg = load_config(config_path);
    const fs::path manifest = manifest_path.empty() ? fs::path(cfg.paths.manifest.value_or("")) : fs::path(manifest_path);
    const fs::path out = out_dir.empty() ? fs::path(cfg.paths.out_dir.value_or("")) : fs::path(out_dir);
    if (manifest.empty()) throw orbit::ConfigError("train: --manifest (or paths.manifest) is required");
    if (out.empty()) throw orbit::ConfigError("train: --out-dir (or paths.out_dir) is required");
    if (!fs::exists(manifest)) throw orbit::NotFoundError("no such manifest: " + manifest.string());

    cfg.paths.manifest = manifest.string();
    cfg.paths.out_dir = out.string();
    echo_resolved_config(cfg, out);

    auto model = orbit::build_model<float>(cfg.model, cfg.resolve_weights_cache());

    orbit::TrainState initial;
    if (!resume_dir.empty()) {
        orbit::load_weights(*model, resume_dir);
        const fs::path history = fs::path(resume_dir) / "history.json";
        if (fs::exists(history)) initial = orbit::state_from_json(orbit::load_json_file(history));
        std::cout << "resumed from " << resume_dir << " (" << initial.history.size() << " epochs of history)\n";
    }

    const orbit::FitResult result = orbit::fit(*model, manifest, cfg.train, out, std::move(initial));
    std::cout << "trained " << result.state.history.size() << " epochs, best validation loss "
              << result.state.best_val_loss << "\n";
    std::cout << "best archive: " << (result.best_archive_dir / "weights.json").string() << "\n";
    return 0;
}

int cmd_enhance(const std::string& config_path, const std::string& weights_dir, const std::string& input,
                const std::string& output) {
    orbit::RunConfig cfg = load_config(config_path);
    // Weights are loaded over the initialization, so never require the
    // pretrained-encoder cache here.
    cfg.model.pretrained = false;
    auto model = orbit::build_model<float>(cfg.model);
    orbit::load_weights(*model, weights_dir);

    const fs::path in(input), out(output);
    std::vector<fs::path> inputs;
    if (fs::is_directory(in)) {
        inputs = orbit::list_images(in);
        if (inputs.empty()) throw orbit::EmptyDatasetError("no decodable images in " + in.string());
        fs::create_directories(out);
    } else {
        if (!fs::exists(in)) throw orbit::NotFoundError("no such file: " + in.string());
        inputs.push_back(in);
        if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    }

    for (const fs::path& path : inputs) {
        const orbit::ImageTensor image = orbit::load_image(path);
        const orbit::ImageTensor enhanced = model->forward(image);
        const fs::path dst = fs::is_directory(in) ? out / (path.stem().string() + ".png") : out;
        orbit::save_image(enhanced, dst);
        std::cout << path.filename().string() << " -> " << dst.string() << "\n";
    }
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& weights_dir, const std::string& manifest_path,
                 const std::string& out_dir, bool identity) {
    orbit::RunConfig cfg = load_config(config_path);
    orbit::Enhancer enhancer;
    std::shared_ptr<orbit::Ures34p<float>> model;
    if (identity) {
        // Test hook: the identity enhancer must reproduce the input metrics.
        enhancer = [](const orbit::ImageTensor& img) { return img; };
    } else {
        if (weights_dir.empty()) throw orbit::ConfigError("evaluate: --weights or --identity is required");
        cfg.model.pretrained = false;
        model = orbit::build_model<float>(cfg.model);
        orbit::load_weights(*model, weights_dir);
        enhancer = [model](const orbit::ImageTensor& img) { return model->forward(img); };
    }

    const orbit::MetricsReport report = orbit::evaluate(enhancer, manifest_path, out_dir);
    std::cout << "evaluated " << report.per_pair.size() << " pairs\n";
    std::cout << "mean psnr_in " << report.psnr_in.mean << " dB, mean psnr_out " << report.psnr_out.mean << " dB\n";
    return 0;
}

int cmd_grid(const std::vector<std::string>& cells, int rows, int cols, int cell_h, int cell_w,
             const std::vector<std::string>& labels, const std::string& out_path) {
    if (rows < 1 || cols < 1) throw orbit::ConfigError("grid: --rows and --cols must be >= 1");
    if (static_cast<int>(cells.size()) != rows * cols)
        throw orbit::ConfigError("grid: got " + std::to_string(cells.size()) + " cells for a " + std::to_string(rows) +
                                 "x" + std::to_string(cols) + " grid");

    std::vector<std::vector<orbit::ImageTensor>> grid_rows;
    for (int r = 0; r < rows; ++r) {
        std::vector<orbit::ImageTensor> row;
        for (int c = 0; c < cols; ++c) row.push_back(orbit::load_image(cells[static_cast<std::size_t>(r * cols + c)]));
        grid_rows.push_back(std::move(row));
    }
    const orbit::ImageTensor grid = orbit::make_grid(grid_rows, cell_h, cell_w);

    const fs::path out(out_path);
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    orbit::save_image(grid, out);
    if (!labels.empty()) {
        std::string legend;
        for (const std::string& label : labels) legend += label + "\n";
        orbit::write_file_atomic(out.string() + ".legend.txt", legend);
    }
    std::cout << "wrote " << grid.height << "x" << grid.width << " grid to " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"URes34P space-image enhancement pipeline"};
    app.require_subcommand(1);

    std::string config_path, clean_dir, out_dir, manifest_path, weights_dir, input, output, resume_dir;
    bool identity = false;
    std::vector<std::string> cells, labels;
    int rows = 0, cols = 0, cell_h = 128, cell_w = 128;

    CLI::App* degrade = app.add_subcommand("degrade", "Build a degraded/clean training dataset");
    degrade->add_option("--config", config_path, "Run config JSON");
    degrade->add_option("--clean-dir", clean_dir, "Directory of clean source images");
    degrade->add_option("--out-dir", out_dir, "Dataset output directory");

    CLI::App* train = app.add_subcommand("train", "Train the enhancement model");
    train->add_option("--config", config_path, "Run config JSON");
    train->add_option("--manifest", manifest_path, "Dataset manifest.json");
    train->add_option("--out-dir", out_dir, "Training output directory");
    train->add_option("--resume", resume_dir, "Archive directory to resume from");

    CLI::App* enhance = app.add_subcommand("enhance", "Enhance an image or directory of images");
    enhance->add_option("--config", config_path, "Run config JSON");
    enhance->add_option("--weights", weights_dir, "Weight archive directory")->required();
    enhance->add_option("--input", input, "Input image or directory")->required();
    enhance->add_option("--output", output, "Output image or directory")->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "Compute PSNR/SSIM reports over a manifest");
    evaluate->add_option("--config", config_path, "Run config JSON");
    evaluate->add_option("--weights", weights_dir, "Weight archive directory");
    evaluate->add_option("--manifest", manifest_path, "Dataset manifest.json")->required();
    evaluate->add_option("--out-dir", out_dir, "Report output directory")->required();
    evaluate->add_flag("--identity", identity, "Evaluate the identity enhancer (test hook)");

    CLI::App* grid = app.add_subcommand("grid", "Tile images into a comparison grid");
    grid->add_option("--cells", cells, "Cell image paths, row-major")->required();
    grid->add_option("--rows", rows, "Grid rows")->required();
    grid->add_option("--cols", cols, "Grid columns")->required();
    grid->add_option("--cell-height", cell_h, "Cell height (default 128)");
    grid->add_option("--cell-width", cell_w, "Cell width (default 128)");
    grid->add_option("--labels", labels, "Labels written to a sidecar legend file");
    grid->add_option("--out", output, "Output PNG path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (degrade->parsed()) return cmd_degrade(config_path, clean_dir, out_dir);
        if (train->parsed()) return cmd_train(config_path, manifest_path, out_dir, resume_dir);
        if (enhance->parsed()) return cmd_enhance(config_path, weights_dir, input, output);
        if (evaluate->parsed()) return cmd_evaluate(config_path, weights_dir, manifest_path, out_dir, identity);
        if (grid->parsed()) return cmd_grid(cells, rows, cols, cell_h, cell_w, labels, output);
    } catch (const orbit::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const orbit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
