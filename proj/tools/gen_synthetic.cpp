// Regenerates the bundled synthetic dataset (grid, design, ensemble,
// observations, pipeline config). The committed files were produced by this
// tool; rerunning it with the same seeds reproduces them on the same build.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "blockcal/oracle.hpp"
#include "blockcal/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace blockcal;
  try {
    const std::string out = argc > 1 ? argv[1] : "data/synthetic";
    std::filesystem::create_directories(out);

    const SpatialGrid grid = make_synthetic_grid();
    const DesignTable dt = make_synthetic_design();
    const Eigen::MatrixXd Y =
        sample_ensemble(grid, dt.design, synthetic_xi_s(), synthetic_xi_theta(), 727);
    // observations = truth run (theta = 2.153) + GP discrepancy
    const Eigen::VectorXd unit = sample_gp_field(grid, ExpCov{0.01, 1.0, 1.0 / 690.0}, 904);
    const Eigen::VectorXd Z = Y.col(3) + std::sqrt(160000.0) * unit;

    auto path = [&](const std::string& name) { return out + "/" + name; };
    write_grid_csv(path("grid.csv"), grid);
    write_design_csv(path("design.csv"), dt);
    write_ensemble_csv(path("ensemble.csv"), grid, dt, Y);
    write_observations_csv(path("observations.csv"), grid, Z);

    PipelineConfig cfg;
    cfg.grid_csv = path("grid.csv");
    cfg.design_csv = path("design.csv");
    cfg.ensemble_csv = path("ensemble.csv");
    cfg.observations_csv = path("observations.csv");
    cfg.blocks = 20;
    cfg.subsample_max = 10;
    cfg.seed = 1;
    cfg.chain_steps = 3000;
    cfg.adjustment = "open-faced";
    cfg.oracle = true;
    cfg.oracle_points = 161;
    cfg.experiment.replicates = 1;
    std::ofstream pc(path("pipeline.json"));
    pc << pipeline_config_to_json(cfg);

    std::cout << "wrote synthetic dataset to " << out << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << error_json(e);
    return 1;
  }
}
