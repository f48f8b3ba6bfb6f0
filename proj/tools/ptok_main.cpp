#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>

#include "ptok/errors.hpp"
#include "ptok/fsio.hpp"
#include "ptok/runner.hpp"

namespace {

using namespace ptok;

Variant to_variant(const std::string& s) {
  if (s == "counterfact") return Variant::CounterFact;
  if (s == "zsre") return Variant::Zsre;
  throw ConfigError("unknown variant: " + s);
}

PTokenInitSpec to_init(const std::string& kind, double sigma) {
  PTokenInitSpec init;
  init.kind = kind == "gaussian" ? PTokenInitKind::Gaussian : PTokenInitKind::MeanNoise;
  if (kind != "gaussian" && kind != "mean_noise") throw ConfigError("unknown init: " + kind);
  init.sigma = sigma;
  return init;
}

struct TrainFlagBundle {
  std::string init_kind = "mean_noise";
  double init_sigma = 0.02;
};

void add_train_flags(CLI::App* cmd, TrainConfig& cfg, TrainFlagBundle& fb) {
  cmd->add_option("--lr", cfg.learning_rate, "learning rate");
  cmd->add_option("--beta1", cfg.beta1, "adam beta1");
  cmd->add_option("--beta2", cfg.beta2, "adam beta2");
  cmd->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
  cmd->add_option("--max-epochs", cfg.max_epochs, "epoch cap");
  cmd->add_option("--patience", cfg.patience, "early-stopping patience");
  cmd->add_option("--batch-facts", cfg.batch_facts, "facts per batch");
  cmd->add_option("--seed", cfg.seed, "run seed");
  cmd->add_option("--ike-demos", cfg.pairs.ike_demos, "demonstration blocks per teacher prompt");
  cmd->add_option("--distractor-lens", cfg.pairs.distractor_lens,
                  "training distractor chain lengths");
  cmd->add_option("--init", fb.init_kind, "marker init: mean_noise | gaussian");
  cmd->add_option("--init-sigma", fb.init_sigma, "init noise scale");
}

int run_cli(int argc, char** argv) {
  CLI::App app{"desk-scale knowledge-editing laboratory"};
  app.set_config("--config", "", "configuration file; flags take precedence");
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic micro-world");
  SynthOptions so;
  synth->add_option("--subjects", so.subjects)->check(CLI::PositiveNumber);
  synth->add_option("--relations", so.relations)->check(CLI::PositiveNumber);
  synth->add_option("--objects", so.objects)->check(CLI::PositiveNumber);
  synth->add_option("--seed", so.seed);
  synth->add_option("--out", so.out_dir)->required();
  synth->callback([&] {
    const auto r = run_synth(so);
    std::printf("synth: %d facts, %d documents -> %s\n", r.n_facts, r.n_docs,
                r.facts_path.c_str());
  });

  auto* ingest = app.add_subcommand("ingest", "validate and canonicalize a fact file");
  IngestOptions io;
  std::string ingest_variant = "counterfact";
  ingest->add_option("--input", io.input_path)->required();
  ingest->add_option("--variant", ingest_variant, "counterfact | zsre");
  ingest->add_option("--out", io.out_dir)->required();
  ingest->callback([&] {
    io.variant = to_variant(ingest_variant);
    const auto r = run_ingest(io);
    std::printf("ingest: %d facts -> %s\n", r.n_facts, r.facts_path.c_str());
  });

  auto* pre = app.add_subcommand("pretrain", "fit the tiny LM on a micro-world corpus");
  PretrainOptions po;
  pre->add_option("--facts", po.facts_path)->required();
  pre->add_option("--corpus", po.corpus_path)->required();
  pre->add_option("--out", po.out_dir)->required();
  pre->add_option("--d-model", po.lm.d_model);
  pre->add_option("--layers", po.lm.n_layers);
  pre->add_option("--heads", po.lm.n_heads);
  pre->add_option("--context", po.lm.max_context);
  pre->add_option("--lr", po.cfg.learning_rate);
  pre->add_option("--pack-len", po.cfg.pack_len);
  pre->add_option("--max-epochs", po.cfg.max_epochs);
  pre->add_option("--check-every", po.cfg.check_every);
  pre->add_option("--warmup-steps", po.cfg.warmup_steps);
  pre->add_option("--target-recall", po.cfg.target_recall);
  pre->add_option("--target-edit", po.cfg.target_edit);
  pre->add_option("--seed", po.cfg.seed);
  pre->callback([&] {
    po.lm.seed = po.cfg.seed;
    const auto r = run_pretrain(po);
    std::printf("pretrain: %d epochs, loss %.4f, recall %.3f, edit %.3f -> %s\n", r.stats.epochs,
                r.stats.final_loss, r.stats.fact_recall, r.stats.edit_success,
                r.model_path.c_str());
    if (!r.stats.reached_targets)
      std::printf("pretrain: targets not reached (recall %.3f, edit %.3f)\n", r.stats.fact_recall,
                  r.stats.edit_success);
  });

  auto* tr = app.add_subcommand("train", "train marker-token embeddings");
  TrainOptions to;
  TrainFlagBundle tfb;
  std::string train_variant = "counterfact";
  tr->add_option("--model", to.model_path)->required();
  tr->add_option("--facts", to.facts_path)->required();
  tr->add_option("--variant", train_variant);
  tr->add_option("--m", to.m, "marker tokens per side");
  tr->add_option("--n-train", to.n_train);
  tr->add_option("--n-val", to.n_val);
  tr->add_option("--out", to.out_dir)->required();
  add_train_flags(tr, to.cfg, tfb);
  tr->callback([&] {
    to.variant = to_variant(train_variant);
    to.init = to_init(tfb.init_kind, tfb.init_sigma);
    const auto r = run_train(to);
    const auto& h = r.history;
    std::printf("train: %zu epochs, best %d (val %.6f)%s -> %s\n", h.epochs.size(), h.best_epoch,
                h.best_epoch >= 0 ? h.epochs[static_cast<size_t>(h.best_epoch)].validation_loss
                                  : 0.0,
                h.stopped_early ? ", stopped early" : "", r.ptokens_path.c_str());
  });

  auto* ev = app.add_subcommand("eval", "compute editing metrics for one method");
  EvalOptions eo;
  std::string eval_variant = "counterfact";
  std::string eval_method = "ptokens";
  ev->add_option("--model", eo.model_path)->required();
  ev->add_option("--ptokens", eo.ptokens_path);
  ev->add_option("--facts", eo.facts_path)->required();
  ev->add_option("--variant", eval_variant);
  ev->add_option("--method", eval_method, "original | baseline | ike | ptokens");
  ev->add_option("--distractor-len", eo.distractor_len);
  ev->add_option("--ike-demos", eo.ike_demos);
  ev->add_option("--n-train", eo.n_train);
  ev->add_option("--n-val", eo.n_val);
  ev->add_option("--seed", eo.seed);
  ev->add_flag("--dump-prompts", eo.dump_prompts, "print the first rendered prompt");
  ev->add_option("--out", eo.out_dir)->required();
  ev->callback([&] {
    eo.variant = to_variant(eval_variant);
    eo.method = parse_method(eval_method);
    const auto r = run_eval(eo);
    const auto& rep = r.report;
    if (rep.variant == Variant::CounterFact)
      std::printf("eval %s: S %.2f ES %.2f PS %.2f NS %.2f (n=%d) -> %s\n",
                  method_name(rep.method), *rep.s, *rep.es, *rep.ps, *rep.ns, rep.n_facts,
                  r.reports_path.c_str());
    else
      std::printf("eval %s: efficacy %.2f paraphrase %.2f specificity %.2f (n=%d) -> %s\n",
                  method_name(rep.method), *rep.efficacy, *rep.paraphrase, *rep.specificity,
                  rep.n_facts, r.reports_path.c_str());
  });

  auto* st = app.add_subcommand("sweep-tokens", "train and evaluate across marker counts");
  SweepTokensOptions sto;
  TrainFlagBundle sfb;
  std::string sweep_variant = "counterfact";
  st->add_option("--model", sto.model_path)->required();
  st->add_option("--facts", sto.facts_path)->required();
  st->add_option("--variant", sweep_variant);
  st->add_option("--m-list", sto.m_list);
  st->add_option("--model-tag", sto.model_tag);
  st->add_option("--n-train", sto.n_train);
  st->add_option("--n-val", sto.n_val);
  st->add_option("--out", sto.out_dir)->required();
  add_train_flags(st, sto.cfg, sfb);
  st->callback([&] {
    sto.variant = to_variant(sweep_variant);
    sto.init = to_init(sfb.init_kind, sfb.init_sigma);
    const auto r = run_sweep_tokens(sto);
    std::printf("sweep-tokens: %zu reports -> %s\n", r.reports.size(), r.table_path.c_str());
  });

  auto* sd = app.add_subcommand("sweep-distractors", "evaluate across distractor lengths");
  SweepDistractorsOptions sdo;
  std::string sd_variant = "counterfact";
  sd->add_option("--model", sdo.model_path)->required();
  sd->add_option("--ptokens", sdo.ptokens_path)->required();
  sd->add_option("--facts", sdo.facts_path)->required();
  sd->add_option("--variant", sd_variant);
  sd->add_option("--lengths", sdo.lengths);
  sd->add_option("--n-train", sdo.n_train);
  sd->add_option("--n-val", sdo.n_val);
  sd->add_option("--seed", sdo.seed);
  sd->add_option("--out", sdo.out_dir)->required();
  sd->callback([&] {
    sdo.variant = to_variant(sd_variant);
    const auto r = run_sweep_distractors(sdo);
    std::printf("sweep-distractors: %zu reports -> %s\n", r.reports.size(),
                r.table_path.c_str());
  });

  auto* be = app.add_subcommand("bench", "token counts and per-edit latency");
  BenchOptions bo;
  be->add_option("--model", bo.model_path)->required();
  be->add_option("--ptokens", bo.ptokens_path)->required();
  be->add_option("--facts", bo.facts_path)->required();
  be->add_option("--ike-demos", bo.ike_demos);
  be->add_option("--batch-size", bo.batch_size);
  be->add_option("--warmup", bo.warmup);
  be->add_option("--train-seconds", bo.train_seconds);
  be->add_option("--n-train", bo.n_train);
  be->add_option("--n-val", bo.n_val);
  be->add_option("--out", bo.out_dir)->required();
  be->callback([&] {
    const auto r = run_bench_command(bo);
    std::printf("%s", read_file(r.summary_path).c_str());
  });

  auto* rp = app.add_subcommand("report", "render stored reports");
  ReportOptions ro;
  rp->add_option("--records", ro.records_path)->required();
  rp->add_option("--format", ro.format, "table | records | charts");
  rp->add_option("--model-tag", ro.model_tag);
  rp->add_option("--out", ro.out_dir)->required();
  rp->callback([&] {
    const auto r = run_report(ro);
    for (const auto& p : r.output_paths) std::printf("report: %s\n", p.c_str());
  });

  // Option targets and callback captures live on this frame, so parsing must
  // happen here as well.
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ptok::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const ptok::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run_cli(argc, argv); }
