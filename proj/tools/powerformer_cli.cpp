#include "powerformer/commands.hpp"
#include "powerformer/error.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace powerformer;

namespace {

void add_inputs(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--case", c.case_path, "MATPOWER case file")->check(CLI::ExistingFile);
  cmd->add_option("--sections", c.sections_path, "section config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--out", c.out_dir, "output directory (created if absent)");
  cmd->add_option("--section-ids", c.section_ids, "restrict to these section ids");
}

void add_env(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--w-ed", c.env.w_ed, "weight of the economic-dispatch reward");
  cmd->add_option("--step-limit", c.env.step_limit, "steps per episode");
  cmd->add_flag("--strict-q", c.env.strict_q, "also require reactive section bounds for success");
}

void add_network(CLI::App* cmd, RunConfig& c, std::string& kind) {
  cmd->add_option("--network", kind, "powerformer, concat, soft_attention, powerformer_E, powerformer_S, powerformer_M")
      ->check(CLI::IsMember({"powerformer", "concat", "soft_attention", "powerformer_E", "powerformer_S",
                             "powerformer_M"}));
  cmd->add_option("--hidden", c.train.network.hidden, "hidden width d");
  cmd->add_option("--layers", c.train.network.layers, "MFSA / GIN layers");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Section power-flow adjustment with graph attention and dueling DQN"};
  app.set_config("--config", "", "TOML/INI file with option values; flags given on the command line take precedence");
  app.require_subcommand(1);

  RunConfig c;
  std::string kind = "powerformer";
  int synth_buses = 30;
  bool dc = false;

  auto* gen = app.add_subcommand("generate", "generate insecure scenarios");
  add_inputs(gen, c);
  gen->add_option("--scenarios", c.scenarios_path, "scenario file to write (default <out>/scenarios.txt)");
  gen->add_option("--count", c.count, "number of scenarios")->check(CLI::PositiveNumber);

  auto* tr = app.add_subcommand("train", "train a dueling DQN policy");
  add_inputs(tr, c);
  add_env(tr, c);
  add_network(tr, c, kind);
  tr->add_option("--scenarios", c.scenarios_path, "scenario file")->check(CLI::ExistingFile);
  tr->add_option("--checkpoint", c.checkpoint_path, "checkpoint to write (default <out>/checkpoint.bin)");
  tr->add_option("--steps", c.train.total_steps, "environment steps");
  tr->add_option("--eval-interval", c.train.eval_interval, "steps between metric rows and checkpoints");
  tr->add_option("--smooth-window", c.train.smooth_window, "episodes in the trailing success rate");
  tr->add_option("--update-every", c.train.update_every, "environment steps per gradient update");
  tr->add_option("--batch", c.train.batch, "minibatch size");
  tr->add_option("--lr", c.train.adam.lr, "Adam learning rate");
  tr->add_option("--gamma", c.train.gamma, "discount factor");
  tr->add_option("--target-update", c.train.target_update, "updates between target-network copies");
  tr->add_option("--epsilon-decay", c.train.epsilon_decay_steps, "steps over which epsilon falls from 0.1 to 0.01");
  tr->add_option("--buffer", c.train.buffer_capacity, "replay capacity");
  tr->add_flag("--buffer-episodes", c.train.buffer_by_episode, "count replay capacity in episodes");

  auto* ev = app.add_subcommand("evaluate", "greedy evaluation of a checkpoint");
  add_inputs(ev, c);
  add_env(ev, c);
  add_network(ev, c, kind);
  ev->add_option("--scenarios", c.scenarios_path, "scenario file")->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", c.checkpoint_path, "checkpoint to load (default <out>/checkpoint.bin)");
  ev->add_option("--split", c.split, "scenarios to evaluate")->check(CLI::IsMember({"test", "train", "all"}));
  ev->add_option("--threads", c.threads, "worker threads, 0 = all cores");

  auto* so = app.add_subcommand("solve", "solve a case and export bus and branch tables");
  so->add_option("--case", c.case_path, "MATPOWER case file")->check(CLI::ExistingFile);
  so->add_option("--out", c.out_dir, "output directory");
  so->add_flag("--dc", dc, "linearized DC solve");

  auto* sy = app.add_subcommand("synth", "write a synthetic corridor case and its sections");
  sy->add_option("--buses", synth_buses, "9 or a multiple of 3 from 12 up");
  sy->add_option("--seed", c.seed, "random seed");
  sy->add_option("--out", c.out_dir, "output directory");

  auto* be = app.add_subcommand("bench", "forward-pass time over random graphs of growing size");
  add_network(be, c, kind);
  be->add_option("--seed", c.seed, "random seed");
  be->add_option("--out", c.out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    c.train.network.kind = parse_network_kind(kind);
    if (*gen) cmd_generate(c, std::cout);
    if (*tr) cmd_train(c, std::cout);
    if (*ev) cmd_evaluate(c, std::cout);
    if (*so) cmd_solve(c, dc, std::cout);
    if (*sy) cmd_synth(c, synth_buses, std::cout);
    if (*be) cmd_bench(c, std::cout);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
