use std::io::Write;

use sphtr::dataset::{SequenceSet, Split};
use sphtr::equivariance::{run_cell, CellSpec, EquivarianceReport};
use sphtr::groups::write_permutation_csv;
use sphtr::model::{evaluate, train, write_epoch_csv, EpochLog, ModelParams, TrainOptions};
use sphtr::uniformity::uniformity;
use sphtr::{
    enumerate_group, group_permutations, Error, ExperimentConfig, GridParams, Precision, Real, Result,
    SamplingMethod, Solid,
};

use crate::setup::{apply_grid, read_cache, write_file, Context};
use crate::{AblationArg, Cli, Command, DatasetCommand, Preset, SolidArg};

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Grid { method, grid } => {
            let ctx = Context::resolve(&cli, |c| {
                apply_grid(c, Some(*method), grid);
                Ok(())
            })?;
            grid_cmd(&ctx)
        }
        Command::Uniformity {
            method,
            grid,
            preset,
            n,
            m,
        } => {
            let ctx = Context::resolve(&cli, |c| {
                apply_grid(c, *method, grid);
                if let Some(n) = n {
                    c.uniformity_iterations = *n;
                }
                if let Some(m) = m {
                    c.uniformity_reference = *m;
                }
                Ok(())
            })?;
            uniformity_cmd(&ctx, *preset)
        }
        Command::Groups { solid, grid } => {
            let with_grid = grid.div.is_some() || grid.edge.is_some();
            let ctx = Context::resolve(&cli, |c| {
                let m = match solid {
                    SolidArg::Cube => crate::MethodArg::Cube,
                    SolidArg::Icosa => crate::MethodArg::Icosa,
                };
                apply_grid(c, Some(m), grid);
                Ok(())
            })?;
            let solid = match solid {
                SolidArg::Cube => Solid::Cube,
                SolidArg::Icosa => Solid::Icosa,
            };
            groups_cmd(&ctx, solid, with_grid)
        }
        Command::Dataset(DatasetCommand::Build {
            method,
            grid,
            source,
            rotate,
        }) => {
            let ctx = Context::resolve(&cli, |c| {
                apply_grid(c, *method, grid);
                if let Some(s) = source {
                    c.set("source", s)?;
                }
                if let Some(r) = rotate {
                    c.set("rotate_train", r)?;
                    c.set("rotate_test", r)?;
                }
                Ok(())
            })?;
            dataset_build(&ctx)
        }
        Command::Dataset(DatasetCommand::Inspect { file }) => dataset_inspect(&read_cache(file)?),
        Command::Train {
            train_cache,
            test_cache,
        } => {
            let ctx = Context::resolve(&cli, |_| Ok(()))?;
            let train_set = match train_cache {
                Some(p) => read_cache(p)?,
                None => ctx.build_split(&ctx.grid()?, Split::Train)?,
            };
            let test_set = match test_cache {
                Some(p) => read_cache(p)?,
                None => ctx.build_split(&ctx.grid()?, Split::Test)?,
            };
            ctx.prepare_output()?;
            train_run(&ctx, &ctx.cfg, &train_set, &test_set, "", true)?;
            Ok(())
        }
        Command::Eval {
            checkpoint,
            test_cache,
        } => {
            let ctx = Context::resolve(&cli, |_| Ok(()))?;
            let test_set = match test_cache {
                Some(p) => read_cache(p)?,
                None => ctx.build_split(&ctx.grid()?, Split::Test)?,
            };
            let ckpt = checkpoint.clone().unwrap_or_else(|| ctx.path("model.ckpt"));
            eval_cmd(&ctx, &test_set, &ckpt)
        }
        Command::Equivariance => {
            let ctx = Context::resolve(&cli, |_| Ok(()))?;
            equivariance_cmd(&ctx)
        }
        Command::Ablate { which, dry_run } => {
            let ctx = Context::resolve(&cli, |_| Ok(()))?;
            match which {
                AblationArg::PatchScale => ablate_patch_scale(&ctx, *dry_run),
                AblationArg::ClsToken => ablate_cls_token(&ctx, *dry_run),
            }
        }
    }
}

fn grid_cmd(ctx: &Context) -> Result<()> {
    let grid = ctx.grid()?;
    ctx.prepare_output()?;
    write_file(&ctx.path("grid.csv"), |w| grid.write_csv(w))?;
    println!(
        "{}: {} points, {} patches of {}",
        grid.params(),
        grid.len(),
        grid.num_patches(),
        grid.patch_size()
    );
    Ok(())
}

fn preset_grids(preset: Preset) -> [GridParams; 3] {
    match preset {
        Preset::Sphmnist => [
            GridParams::Icosa {
                div: 3,
                patch_scale: 0,
            },
            GridParams::Cube { edge: 15 },
            GridParams::Erp {
                height: 25,
                width: 50,
                patch_h: 5,
                patch_w: 5,
            },
        ],
        Preset::Sphcifar => [
            GridParams::Icosa {
                div: 4,
                patch_scale: 0,
            },
            GridParams::Cube { edge: 29 },
            GridParams::Erp {
                height: 50,
                width: 100,
                patch_h: 10,
                patch_w: 20,
            },
        ],
    }
}

fn uniformity_cmd(ctx: &Context, preset: Option<Preset>) -> Result<()> {
    let grids: Vec<GridParams> = match preset {
        Some(p) => preset_grids(p).to_vec(),
        None => vec![ctx.cfg.grid()],
    };
    let built: Vec<_> = grids.iter().map(GridParams::build).collect::<Result<_>>()?;
    ctx.prepare_output()?;
    let mut summary = Vec::new();
    writeln!(
        summary,
        "method,grid,points,reference_size,iterations,final_value,trailing25_range"
    )?;
    for grid in &built {
        let m = match ctx.cfg.uniformity_reference {
            0 => grid.len(),
            m => m,
        };
        let report = uniformity(grid, ctx.cfg.uniformity_iterations, m, ctx.cfg.seed)?;
        write_file(&ctx.path(&format!("uniformity_{}.csv", grid.method())), |w| {
            report.write_csv(w)
        })?;
        let range = report.trailing_range(25.min(report.n_iterations));
        writeln!(
            summary,
            "{},{},{},{m},{},{:.6},{:.6}",
            grid.method(),
            grid.params(),
            grid.len(),
            report.n_iterations,
            report.final_value,
            range
        )?;
        println!(
            "{:<24} points={:<6} unif={:.4}",
            grid.params().to_string(),
            grid.len(),
            report.final_value
        );
    }
    std::fs::write(ctx.path("uniformity_summary.csv"), summary)?;
    Ok(())
}

fn groups_cmd(ctx: &Context, solid: Solid, with_grid: bool) -> Result<()> {
    let group = enumerate_group(solid)?;
    let axioms = group.check_axioms();
    ctx.prepare_output()?;
    write_file(&ctx.path("group.csv"), |w| group.write_csv(w))?;
    println!(
        "{solid}: order {}, identity id {}, axioms {} (closure error {:.1e}, orthogonality {:.1e}, det {:.1e})",
        axioms.order,
        group.identity_id(),
        if axioms.holds() { "hold" } else { "FAIL" },
        axioms.closure_error,
        axioms.max_orthogonality_error,
        axioms.max_det_error
    );
    if with_grid {
        let grid = ctx.grid()?;
        let perms = group_permutations(&group, &grid)?;
        write_file(&ctx.path("permutations.csv"), |w| {
            write_permutation_csv(w, &group, &grid, &perms)
        })?;
        let worst = perms.iter().map(|p| p.max_match_error).fold(0.0, f64::max);
        let aligned = perms.iter().filter(|p| p.within_patch_aligned).count();
        println!(
            "{}: {} permutations, max match error {worst:.2e}, {aligned} keep slot order",
            grid.params(),
            perms.len()
        );
    }
    if !axioms.holds() {
        return Err(Error::Internal(format!("{solid} group axioms failed")));
    }
    Ok(())
}

fn dataset_build(ctx: &Context) -> Result<()> {
    let grid = ctx.grid()?;
    let train_set = ctx.build_split(&grid, Split::Train)?;
    let test_set = ctx.build_split(&grid, Split::Test)?;
    ctx.prepare_output()?;
    for (set, split) in [(&train_set, Split::Train), (&test_set, Split::Test)] {
        write_file(&ctx.path(&format!("{split}.sphseq")), |w| set.write_cache(w))?;
        write_file(&ctx.path(&format!("rotations_{split}.csv")), |w| {
            set.write_rotations_csv(w)
        })?;
        println!(
            "{split}: {} sequences of {}x{} from {} on {}",
            set.len(),
            set.num_patches,
            set.input_dim(),
            ctx.cfg.source,
            grid.params()
        );
    }
    Ok(())
}

fn dataset_inspect(set: &SequenceSet) -> Result<()> {
    println!("grid       {}", set.grid);
    println!(
        "shape      {} x {} (patch size {}, channels {})",
        set.num_patches,
        set.input_dim(),
        set.patch_size,
        set.channels
    );
    println!("examples   {}", set.len());
    println!("seed       {}", set.seed);
    println!("rotation   {}", set.rotate);
    let mut hist = [0usize; 256];
    for &l in set.labels() {
        hist[usize::from(l)] += 1;
    }
    let labels: Vec<String> = hist
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(l, c)| format!("{l}:{c}"))
        .collect();
    println!("labels     {}", labels.join(" "));
    Ok(())
}

/// Trains one model and writes `epochs{tag}.csv` (after every epoch),
/// and the checkpoint when `save` is set.
fn train_run(
    ctx: &Context,
    cfg: &ExperimentConfig,
    train_set: &SequenceSet,
    test_set: &SequenceSet,
    tag: &str,
    save: bool,
) -> Result<Vec<EpochLog>> {
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(ctx, cfg, train_set, test_set, tag, save),
        Precision::F64 => train_typed::<f64>(ctx, cfg, train_set, test_set, tag, save),
    }
}

fn train_typed<T: Real>(
    ctx: &Context,
    cfg: &ExperimentConfig,
    train_set: &SequenceSet,
    test_set: &SequenceSet,
    tag: &str,
    save: bool,
) -> Result<Vec<EpochLog>> {
    let model = cfg.model(train_set.num_patches, train_set.input_dim());
    let mut params = ModelParams::<T>::init(&model, cfg.seed)?;
    eprintln!(
        "training {} params on {} examples ({}), testing on {}",
        params.count(),
        train_set.len(),
        train_set.grid,
        test_set.len()
    );
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: cfg.seed,
    };
    let epochs_path = ctx.path(&format!("epochs{tag}.csv"));
    let mut so_far = Vec::new();
    let mut write_error = None;
    let logs = train(&mut params, train_set, Some(test_set), &opts, |log| {
        let test_acc = log.test.map_or(f64::NAN, |t| t.accuracy());
        eprintln!(
            "epoch {:>4}  loss {:.4}  train acc {:.4}  test acc {:.4}",
            log.epoch,
            log.train.mean_loss,
            log.train.accuracy(),
            test_acc
        );
        so_far.push(log.clone());
        if let Err(e) = write_file(&epochs_path, |w| write_epoch_csv(&so_far, w)) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    if save {
        let cast = params.cast::<f32>();
        write_file(&ctx.path(&format!("model{tag}.ckpt")), |w| cast.save(w))?;
    }
    if let Some(last) = logs.last().and_then(|l| l.test) {
        println!(
            "final test accuracy {:.4} ({} / {})",
            last.accuracy(),
            last.correct,
            last.count
        );
    }
    Ok(logs)
}

fn eval_cmd(ctx: &Context, test_set: &SequenceSet, ckpt: &std::path::Path) -> Result<()> {
    let model = ctx.cfg.model(test_set.num_patches, test_set.input_dim());
    let file = std::fs::File::open(ckpt).map_err(|e| Error::Ingestion {
        path: ckpt.to_path_buf(),
        reason: e.to_string(),
    })?;
    let params = ModelParams::<f32>::load(&model, std::io::BufReader::new(file))?;
    let eval = evaluate(&params, test_set)?;
    ctx.prepare_output()?;
    write_file(&ctx.path("eval.csv"), |w| {
        writeln!(w, "count,correct,accuracy,mean_loss")?;
        writeln!(
            w,
            "{},{},{:.6},{:.6}",
            eval.count,
            eval.correct,
            eval.accuracy(),
            eval.mean_loss
        )?;
        Ok(())
    })?;
    println!(
        "accuracy {:.4} ({} / {})",
        eval.accuracy(),
        eval.correct,
        eval.count
    );
    Ok(())
}

fn equivariance_cmd(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let dir = cfg.source_dir(ctx.data_root.as_deref())?;
    let images = sphtr::dataset::load_source(cfg.source, &dir, Split::Test, Some(cfg.eq_samples), cfg.seed)?;
    ctx.prepare_output()?;
    let mut summary = Vec::new();
    writeln!(
        summary,
        "mode,grid,layers,pos_embedding,precision,n,aggregate_delta"
    )?;
    for &pos in &cfg.eq_pos_embedding {
        let mut rows = Vec::new();
        let mut header = true;
        for &mode in &cfg.eq_modes {
            for &level in &cfg.eq_divs {
                let grid = match cfg.method {
                    SamplingMethod::Cube => GridParams::Cube { edge: level },
                    _ => GridParams::Icosa {
                        div: level,
                        patch_scale: cfg.patch_scale.min(level),
                    },
                };
                for &layers in &cfg.eq_layers {
                    let spec = CellSpec {
                        grid,
                        layers,
                        model_dim: cfg.model_dim,
                        heads: cfg.heads,
                        samples: cfg.eq_samples,
                        mode,
                        use_pos_embedding: pos,
                        use_cls_token: cfg.cls_token,
                        seed: cfg.seed,
                    };
                    let report: EquivarianceReport = match cfg.precision {
                        Precision::F32 => run_cell::<f32>(&spec, &images, cfg.source)?,
                        Precision::F64 => run_cell::<f64>(&spec, &images, cfg.source)?,
                    };
                    report.write_csv(&mut rows, header)?;
                    header = false;
                    writeln!(
                        summary,
                        "{mode},{grid},{layers},{pos},{},{},{:.6e}",
                        report.precision, report.n, report.aggregate
                    )?;
                    println!(
                        "{mode:<10} {:<18} layers={layers:<2} pos={pos:<5} delta={:.3e}",
                        grid.to_string(),
                        report.aggregate
                    );
                }
            }
        }
        let name = if pos {
            "equivariance_pos_embedding.csv"
        } else {
            "equivariance.csv"
        };
        std::fs::write(ctx.path(name), rows)?;
    }
    std::fs::write(ctx.path("equivariance_summary.csv"), summary)?;
    Ok(())
}

fn ablate_patch_scale(ctx: &Context, dry_run: bool) -> Result<()> {
    let base = &ctx.cfg;
    if base.method != SamplingMethod::Icosa {
        return Err(Error::Config("patch-scale ablation needs method = icosa".into()));
    }
    let runs: Vec<(usize, u64, ExperimentConfig)> = base
        .ablate_patch_scales
        .iter()
        .flat_map(|&k| {
            base.ablate_seeds.iter().map(move |&seed| {
                let mut c = base.clone();
                c.patch_scale = k;
                c.seed = seed;
                (k, seed, c)
            })
        })
        .collect();
    for (k, _, _) in &runs {
        if *k > base.div {
            return Err(Error::Config(format!("patch scale {k} exceeds div {}", base.div)));
        }
    }
    ctx.prepare_output()?;
    for (k, seed, c) in &runs {
        std::fs::write(
            ctx.path(&format!("config_k{k}_seed{seed}.resolved")),
            c.resolved(),
        )?;
    }
    if dry_run {
        for (k, seed, c) in &runs {
            println!("# k={k} seed={seed}\n{}", c.resolved());
        }
        return Ok(());
    }

    let mut table = Vec::new();
    writeln!(
        table,
        "patch_scale,seed,num_patches,patch_size,params,test_accuracy"
    )?;
    for &seed in &base.ablate_seeds {
        // Points do not depend on k, so one sampling serves every scale.
        let mut c0 = base.clone();
        c0.patch_scale = 0;
        c0.seed = seed;
        let sub = Context {
            cfg: c0.clone(),
            out: ctx.out.clone(),
            data_root: ctx.data_root.clone(),
        };
        let grid = sub.grid()?;
        let train0 = sub.build_split(&grid, Split::Train)?;
        let test0 = sub.build_split(&grid, Split::Test)?;
        for (k, s, c) in runs.iter().filter(|r| r.1 == seed) {
            let train_set = train0.regroup_icosa(*k)?;
            let test_set = test0.regroup_icosa(*k)?;
            let logs = train_run(ctx, c, &train_set, &test_set, &format!("_k{k}_seed{s}"), false)?;
            let acc = logs.last().and_then(|l| l.test).map_or(0.0, |t| t.accuracy());
            let count = c
                .model(train_set.num_patches, train_set.input_dim())
                .param_count();
            writeln!(
                table,
                "{k},{s},{},{},{count},{acc:.6}",
                train_set.num_patches, train_set.patch_size
            )?;
        }
    }
    std::fs::write(ctx.path("ablate_patch_scale.csv"), table)?;
    Ok(())
}

fn ablate_cls_token(ctx: &Context, dry_run: bool) -> Result<()> {
    let variants: Vec<(&str, ExperimentConfig)> = [("mean-pool", false), ("cls-token", true)]
        .into_iter()
        .map(|(name, cls)| {
            let mut c = ctx.cfg.clone();
            c.cls_token = cls;
            (name, c)
        })
        .collect();
    ctx.prepare_output()?;
    for (name, c) in &variants {
        std::fs::write(ctx.path(&format!("config_{name}.resolved")), c.resolved())?;
    }
    if dry_run {
        for (name, c) in &variants {
            println!("# {name}\n{}", c.resolved());
        }
        return Ok(());
    }
    let grid = ctx.grid()?;
    let train_set = ctx.build_split(&grid, Split::Train)?;
    let test_set = ctx.build_split(&grid, Split::Test)?;
    let mut curves = Vec::new();
    writeln!(
        curves,
        "variant,epoch,train_loss,train_accuracy,test_loss,test_accuracy"
    )?;
    for (name, c) in &variants {
        let logs = train_run(ctx, c, &train_set, &test_set, &format!("_{name}"), false)?;
        for l in &logs {
            let t = l.test.expect("test set given");
            writeln!(
                curves,
                "{name},{},{:.6},{:.6},{:.6},{:.6}",
                l.epoch,
                l.train.mean_loss,
                l.train.accuracy(),
                t.mean_loss,
                t.accuracy()
            )?;
        }
    }
    std::fs::write(ctx.path("ablate_cls_token.csv"), curves)?;
    Ok(())
}
