// cbfuse: simulate undersampled cone-beam CT from procedural phantoms, fuse
// it with variably misaligned preoperative CT, and train/evaluate a 3D U-Net
// segmenter over the full quality x alignment experiment grid.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbfuse/dataset.hpp"
#include "cbfuse/fdk.hpp"
#include "cbfuse/grid.hpp"
#include "cbfuse/metrics.hpp"
#include "cbfuse/misalign.hpp"
#include "cbfuse/phantom.hpp"
#include "cbfuse/projection.hpp"
#include "cbfuse/report.hpp"
#include "cbfuse/train.hpp"
#include "cbfuse/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw cbfuse::IoFailure("cannot open: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw cbfuse::IoFailure("cannot write: " + path);
  f << text;
}

cbfuse::FilterKind parse_filter(const std::string& name) {
  if (name == "ramp") return cbfuse::FilterKind::Ramp;
  if (name == "ramp-hann" || name == "hann") return cbfuse::FilterKind::RampHann;
  throw CLI::ValidationError("--filter", "expected 'ramp' or 'ramp-hann'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cone-beam CT / CT fusion segmentation sandbox"};
  app.require_subcommand(1);

  // phantom
  auto* cmd_phantom = app.add_subcommand("phantom", "generate a phantom CT + labels");
  uint64_t ph_seed = 0;
  int ph_dims = 64;
  double ph_spacing = 2.0;
  int ph_tumors = -1;
  std::string ph_out = ".";
  cmd_phantom->add_option("--seed", ph_seed, "phantom seed");
  cmd_phantom->add_option("--dims", ph_dims, "voxels per axis")->check(CLI::Range(16, 1024));
  cmd_phantom->add_option("--spacing", ph_spacing, "mm per voxel");
  cmd_phantom->add_option("--tumors", ph_tumors, "tumor count (-1 draws 1..3)");
  cmd_phantom->add_option("--out", ph_out, "output directory")->required();

  // project
  auto* cmd_project = app.add_subcommand("project", "forward-project DRRs");
  int pr_np = 64;
  std::string pr_in, pr_out;
  double pr_sid = 600.0, pr_sdd = 1000.0, pr_du = 2.0, pr_dv = 2.0;
  int pr_nu = 96, pr_nv = 96;
  cmd_project->add_option("--np", pr_np, "number of projections")->required();
  cmd_project->add_option("--in", pr_in, "input volume (.cbv/.nii)")->required();
  cmd_project->add_option("--out", pr_out, "output projections (.cbp)")->required();
  cmd_project->add_option("--sid", pr_sid, "source-isocenter distance (mm)");
  cmd_project->add_option("--sdd", pr_sdd, "source-detector distance (mm)");
  cmd_project->add_option("--nu", pr_nu, "detector columns");
  cmd_project->add_option("--nv", pr_nv, "detector rows");
  cmd_project->add_option("--du", pr_du, "detector pitch u (mm)");
  cmd_project->add_option("--dv", pr_dv, "detector pitch v (mm)");

  // reconstruct
  auto* cmd_recon = app.add_subcommand("reconstruct", "FDK reconstruction");
  std::string rc_in, rc_out, rc_filter = "ramp";
  int rc_dims = 64;
  double rc_spacing = 2.0;
  cmd_recon->add_option("--in", rc_in, "input projections (.cbp)")->required();
  cmd_recon->add_option("--out", rc_out, "output volume (.cbv)")->required();
  cmd_recon->add_option("--filter", rc_filter, "ramp | ramp-hann");
  cmd_recon->add_option("--dims", rc_dims, "output voxels per axis");
  cmd_recon->add_option("--spacing", rc_spacing, "output mm per voxel");

  // misalign
  auto* cmd_mis = app.add_subcommand("misalign", "misalign a CT volume");
  double ms_alpha = 0.25, ms_tscale = 1.0;
  uint64_t ms_seed = 0;
  std::string ms_mode = "affine", ms_in, ms_out, ms_dump;
  cmd_mis->add_option("--alpha-a", ms_alpha, "alignment factor")->required();
  cmd_mis->add_option("--mode", ms_mode, "affine | elastic");
  cmd_mis->add_option("--seed", ms_seed, "draw seed");
  cmd_mis->add_option("--translation-scale", ms_tscale, "rescales the translation draw");
  cmd_mis->add_option("--in", ms_in, "input volume")->required();
  cmd_mis->add_option("--out", ms_out, "output volume")->required();
  cmd_mis->add_option("--dump-params", ms_dump, "write the drawn parameters as JSON");

  // fuse
  auto* cmd_fuse = app.add_subcommand("fuse", "assemble a training sample directory");
  std::string fu_cbct, fu_ct, fu_labels, fu_out;
  cmd_fuse->add_option("--cbct", fu_cbct, "CBCT channel (.cbv)")->required();
  cmd_fuse->add_option("--ct", fu_ct, "CT channel (.cbv), omit for CBCT-only");
  cmd_fuse->add_option("--labels", fu_labels, "labels (.cbv)")->required();
  cmd_fuse->add_option("--out", fu_out, "sample directory")->required();

  // train
  auto* cmd_train = app.add_subcommand("train", "train the segmentation net");
  std::string tr_config, tr_data, tr_out;
  cmd_train->add_option("--config", tr_config, "training config JSON")->required();
  cmd_train->add_option("--data", tr_data, "dataset directory (sample_*)")->required();
  cmd_train->add_option("--out", tr_out, "checkpoint path")->required();

  // eval
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_model, ev_data, ev_out;
  cmd_eval->add_option("--model", ev_model, "checkpoint path")->required();
  cmd_eval->add_option("--data", ev_data, "dataset directory (sample_*)")->required();
  cmd_eval->add_option("--out", ev_out, "report JSON path")->required();

  // grid
  auto* cmd_grid = app.add_subcommand("grid", "run the experiment grid");
  std::string gr_config, gr_out = "grid_out";
  cmd_grid->add_option("--config", gr_config, "grid config JSON (defaults when omitted)");
  cmd_grid->add_option("--out", gr_out, "output directory")->required();

  // report
  auto* cmd_report = app.add_subcommand("report", "render a results table");
  std::string rp_results, rp_csv = "table.csv", rp_md = "table.md";
  cmd_report->add_option("--results", rp_results, "results.csv from the grid")->required();
  cmd_report->add_option("--out-csv", rp_csv, "table CSV path");
  cmd_report->add_option("--out-md", rp_md, "table markdown path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_phantom) {
      cbfuse::PhantomSpec spec;
      spec.seed = ph_seed;
      spec.dims = {ph_dims, ph_dims, ph_dims};
      spec.spacing = {ph_spacing, ph_spacing, ph_spacing};
      spec.n_tumors = ph_tumors;
      auto [vol, labels] = cbfuse::generate_phantom(spec);
      fs::create_directories(ph_out);
      cbfuse::store_volume(vol, ph_out + "/ct.cbv");
      cbfuse::store_labels(labels, ph_out + "/labels.cbv");
      std::cout << "wrote " << ph_out << "/ct.cbv and labels.cbv\n";
    } else if (*cmd_project) {
      cbfuse::ConeBeamGeometry geom;
      geom.n_projections = pr_np;
      geom.sid = pr_sid;
      geom.sdd = pr_sdd;
      geom.nu = pr_nu;
      geom.nv = pr_nv;
      geom.du = pr_du;
      geom.dv = pr_dv;
      geom.set_uniform_angles();
      geom.validate();
      cbfuse::Volume vol = cbfuse::load_scalar_volume(pr_in);
      cbfuse::store_projections(cbfuse::forward_project(vol, geom), pr_out);
      std::cout << "wrote " << pr_out << " (" << pr_np << " views)\n";
    } else if (*cmd_recon) {
      cbfuse::ProjectionSet ps = cbfuse::load_projections(rc_in);
      cbfuse::ReconConfig cfg;
      cfg.grid = cbfuse::centered_grid({rc_dims, rc_dims, rc_dims},
                                       {rc_spacing, rc_spacing, rc_spacing});
      cfg.filter = parse_filter(rc_filter);
      cbfuse::store_volume(cbfuse::reconstruct(ps, cfg), rc_out);
      std::cout << "wrote " << rc_out << "\n";
    } else if (*cmd_mis) {
      cbfuse::MisalignmentSpec spec;
      spec.alpha_a = ms_alpha;
      spec.seed = ms_seed;
      spec.translation_scale = ms_tscale;
      if (ms_mode == "affine")
        spec.mode = cbfuse::MisalignMode::AffineOnly;
      else if (ms_mode == "elastic")
        spec.mode = cbfuse::MisalignMode::AffineThenElastic;
      else
        throw CLI::ValidationError("--mode", "expected 'affine' or 'elastic'");
      cbfuse::Volume ct = cbfuse::load_scalar_volume(ms_in);
      cbfuse::store_volume(cbfuse::apply_misalignment(ct, spec), ms_out);
      if (!ms_dump.empty())
        write_file(ms_dump, cbfuse::misalignment_params_json(spec, ct.grid));
      std::cout << "wrote " << ms_out << "\n";
    } else if (*cmd_fuse) {
      cbfuse::FusedSample s;
      s.channels.push_back(cbfuse::load_scalar_volume(fu_cbct));
      if (!fu_ct.empty()) s.channels.push_back(cbfuse::load_scalar_volume(fu_ct));
      s.labels = cbfuse::load_label_volume(fu_labels);
      s.prov.mode = fu_ct.empty() ? "baseline" : "affine";
      cbfuse::save_sample(s, fu_out);
      std::cout << "wrote sample " << fu_out << "\n";
    } else if (*cmd_train) {
      json cfg_json = json::parse(read_file(tr_config));
      cbfuse::TrainConfig tc;
      tc.lr = cfg_json.value("lr", tc.lr);
      tc.epochs = cfg_json.value("epochs", tc.epochs);
      tc.batch_size = cfg_json.value("batch_size", tc.batch_size);
      tc.seed = cfg_json.value("seed", tc.seed);
      tc.bce_weight = cfg_json.value("bce_weight", tc.bce_weight);
      tc.dice_weight = cfg_json.value("dice_weight", tc.dice_weight);

      auto samples = cbfuse::load_dataset_dir(tr_data);
      cbfuse::UNetConfig ucfg;
      ucfg.in_channels = static_cast<int>(samples.front().channels.size());
      ucfg.instance_norm = cfg_json.value("instance_norm", false);
      for (const auto& s : samples)
        if (static_cast<int>(s.channels.size()) != ucfg.in_channels)
          throw cbfuse::ShapeMismatch("samples disagree on channel count");

      std::vector<cbfuse::TrainSample> ts;
      for (const auto& s : samples)
        ts.push_back({cbfuse::sample_to_input(s), cbfuse::labels_to_target(s.labels)});
      cbfuse::UNet model(ucfg, tc.seed);
      cbfuse::VectorSource source(std::move(ts));
      cbfuse::TrainResult res = cbfuse::train(model, source, tc);
      model.save(tr_out);
      std::cout << "trained " << samples.size() << " samples for " << tc.epochs
                << " epochs, final epoch loss " << res.epoch_loss.back() << ", wrote " << tr_out
                << "\n";
    } else if (*cmd_eval) {
      cbfuse::UNet model = cbfuse::UNet::load(ev_model);
      auto samples = cbfuse::load_dataset_dir(ev_data);
      cbfuse::DiceReport report;
      json per_volume = json::array();
      for (const auto& s : samples) {
        cbfuse::Tensor probs = model.predict(cbfuse::sample_to_input(s));
        std::size_t per = s.labels.grid.voxel_count();
        std::vector<float> lp(probs.v.begin(), probs.v.begin() + per);
        std::vector<float> tp(probs.v.begin() + per, probs.v.begin() + 2 * per);
        double dl = cbfuse::dice(cbfuse::binarize(lp), s.labels.liver_mask());
        double dt = cbfuse::dice(cbfuse::binarize(tp), s.labels.tumor_mask());
        report.per_volume.push_back({dl, dt});
        per_volume.push_back({{"phantom_seed", s.prov.phantom_seed}, {"liver", dl}, {"tumor", dt}});
      }
      json out = {{"n_volumes", report.n_volumes()},
                  {"mean_liver", report.mean_liver()},
                  {"mean_tumor", report.mean_tumor()},
                  {"per_volume", per_volume}};
      write_file(ev_out, out.dump(2) + "\n");
      std::cout << "mean dice: liver " << report.mean_liver() << ", tumor "
                << report.mean_tumor() << " over " << report.n_volumes() << " volumes\n";
    } else if (*cmd_grid) {
      cbfuse::GridSpec spec;
      if (!gr_config.empty()) spec = cbfuse::grid_spec_from_json(read_file(gr_config));
      fs::create_directories(gr_out);
      write_file(gr_out + "/grid_config.json", cbfuse::grid_spec_to_json(spec));
      cbfuse::GridResult result = cbfuse::run_grid(spec, gr_out);
      int failed = 0;
      for (const auto& c : result.cells) failed += c.ok ? 0 : 1;
      std::cout << "grid finished: " << result.cells.size() << " cells, " << failed
                << " failed; results in " << gr_out << "/results.csv\n";
    } else if (*cmd_report) {
      cbfuse::GridResult combined = cbfuse::parse_results_csv(read_file(rp_results));
      auto [fusion, baseline] = cbfuse::split_baseline(combined);
      cbfuse::RenderedTable table = cbfuse::render_table(fusion, baseline);
      write_file(rp_csv, table.csv);
      write_file(rp_md, table.markdown);
      std::cout << "wrote " << rp_csv << " and " << rp_md << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
