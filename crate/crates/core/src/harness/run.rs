//! The sequential training protocol and its two baselines.
//!
//! Per task: combine the pool into `M_all`, re-initialize unselected variational
//! parameters (from the second task on), train with frozen weight gradients while
//! γ is recomputed every `fd_interval` epochs, finalize the task's mask into the
//! pool, then re-evaluate every task seen so far through its own artifact.

use std::time::Instant;

use log::info;

use crate::decompose::{update_schedule, CompressionSchedule};
use crate::error::{IbmError, Result};
use crate::harness::config::{DataSpec, RunConfig};
use crate::harness::data::{generate_split_gaussians, Split, TaskDataset};
use crate::harness::idx::ingest_idx;
use crate::harness::report::{GammaRecord, MaskCount, RunReport, Strategy};
use crate::mask::{check_capacity, reinit_va_params, CumulativeMask, MemoryPool, TaskArtifact};
use crate::metrics::{accuracy, AccuracyMatrix};
use crate::network::{AdamConfig, AdamState, Network};
use crate::tensor::{Matrix, SeededRng};

/// Independent random streams derived from one run seed.
struct Streams {
    data: SeededRng,
    init: SeededRng,
    train: SeededRng,
    reinit: SeededRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut root = SeededRng::new(seed);
        Self {
            data: root.split(),
            init: root.split(),
            train: root.split(),
            reinit: root.split(),
        }
    }
}

/// Materializes the task sequence described by `config.data`.
pub fn load_tasks(config: &RunConfig) -> Result<Vec<TaskDataset>> {
    match &config.data {
        DataSpec::SplitGaussians(spec) => {
            let mut streams = Streams::new(config.seed);
            generate_split_gaussians(spec, &mut streams.data)
        }
        DataSpec::Idx(spec) => ingest_idx(spec),
    }
}

/// Result of an IBM run: the report plus the trained backbone and its memory pool.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub net: Network,
    pub pool: MemoryPool,
}

pub fn run_sequence(config: &RunConfig) -> Result<RunOutput> {
    let tasks = load_tasks(config)?;
    run_sequence_on(config, &tasks)
}

pub fn run_sequence_on(config: &RunConfig, tasks: &[TaskDataset]) -> Result<RunOutput> {
    config.validate()?;
    check_tasks(tasks)?;
    let mut streams = Streams::new(config.seed);
    let initial_gamma = crate::decompose::INITIAL_GAMMA_FRACTION * config.kl_scale;
    let mut net = Network::new(
        tasks[0].input_width(),
        &config.hidden_widths,
        initial_gamma,
        config.loss_scale,
        &mut streams.init,
    )?;
    let shapes = net.layer_shapes();
    let mut schedule = CompressionSchedule::new(
        config.delta,
        config.fd_interval,
        config.kl_scale,
        shapes.len(),
    )?;
    let mut pool = MemoryPool::new();
    let mut matrix = AccuracyMatrix::new();
    let mut final_losses = Vec::new();
    let mut mask_counts = Vec::new();
    let mut gamma_history = Vec::new();
    let mut wall_clock = Vec::new();

    for (t, task) in tasks.iter().enumerate() {
        let started = Instant::now();
        let m_all = pool.cumulative_mask(&shapes)?;
        check_capacity(&m_all, t).map_err(|e| e.in_task(t))?;
        if t > 0 && config.reinit {
            for (layer, m) in net.layers.iter_mut().zip(&m_all.layers) {
                reinit_va_params(layer, m, &mut streams.reinit)?;
            }
        }
        net.add_head(t, task.classes, &mut streams.init)
            .map_err(|e| e.in_task(t))?;
        schedule.reset();
        schedule.history.clear();
        net.set_gammas(&schedule.gammas);

        let loss = train_task(
            &mut net,
            task,
            t,
            config,
            &m_all,
            Some(&mut schedule),
            &mut streams.train,
        )
        .map_err(|e| e.in_task(t))?;
        final_losses.push(loss);
        gamma_history.extend(schedule.history.iter().map(|e| GammaRecord {
            task: t,
            epoch: e.epoch,
            layer: e.layer,
            gamma: e.gamma,
        }));

        let artifact = pool
            .finalize_task(&net, t, config.alpha_threshold)
            .map_err(|e| e.in_task(t))?
            .clone();
        let frozen_after = pool.cumulative_mask(&shapes)?;
        for (l, (selected, frozen)) in artifact
            .masks
            .counts()
            .into_iter()
            .zip(frozen_after.counts())
            .enumerate()
        {
            mask_counts.push(MaskCount {
                task: t,
                layer: l,
                selected,
                total: shapes[l].0 * shapes[l].1,
                frozen,
            });
        }

        let row = evaluate_pool(&net, &pool, &tasks[..=t])?;
        info!(
            "task {t}: loss {loss:.4}, selected {}/{} weights, accuracies {row:?}",
            artifact.masks.total_selected(),
            artifact.masks.total_weights()
        );
        matrix.push_row(row)?;
        wall_clock.push(started.elapsed().as_secs_f64());
    }

    let mut report = RunReport::new(Strategy::Ibm, config.seed, matrix, config.fwt_range)?;
    report.final_losses = final_losses;
    report.mask_counts = mask_counts;
    report.gamma_history = gamma_history;
    report.wall_clock = wall_clock;
    Ok(RunOutput { report, net, pool })
}

/// Fine-tuning (shared backbone, no regularization or freezing) or multi-task
/// (a fresh network per task) baseline. Both use γ = 0 throughout.
pub fn run_baseline(config: &RunConfig, strategy: Strategy) -> Result<RunReport> {
    let tasks = load_tasks(config)?;
    run_baseline_on(config, &tasks, strategy)
}

pub fn run_baseline_on(config: &RunConfig, tasks: &[TaskDataset], strategy: Strategy) -> Result<RunReport> {
    config.validate()?;
    check_tasks(tasks)?;
    let mut streams = Streams::new(config.seed);
    let input = tasks[0].input_width();
    let mut matrix = AccuracyMatrix::new();
    let mut final_losses = Vec::new();
    let mut wall_clock = Vec::new();

    match strategy {
        Strategy::Ibm => {
            return Err(IbmError::Config("ibm is not a baseline strategy".into()));
        }
        Strategy::Finetune => {
            let mut net = Network::new(input, &config.hidden_widths, 0.0, config.loss_scale, &mut streams.init)?;
            let free = CumulativeMask::zeros(&net.layer_shapes());
            for (t, task) in tasks.iter().enumerate() {
                let started = Instant::now();
                net.add_head(t, task.classes, &mut streams.init)?;
                let loss = train_task(&mut net, task, t, config, &free, None, &mut streams.train)
                    .map_err(|e| e.in_task(t))?;
                final_losses.push(loss);
                let row = (0..=t)
                    .map(|i| {
                        let artifact = TaskArtifact::dense(&net, i)?;
                        evaluate(&net, &artifact, &tasks[i].test)
                    })
                    .collect::<Result<Vec<_>>>()?;
                info!("finetune task {t}: loss {loss:.4}, accuracies {row:?}");
                matrix.push_row(row)?;
                wall_clock.push(started.elapsed().as_secs_f64());
            }
        }
        Strategy::Multitask => {
            let mut own = Vec::with_capacity(tasks.len());
            for (t, task) in tasks.iter().enumerate() {
                let started = Instant::now();
                let mut init = streams.init.split();
                let mut net = Network::new(input, &config.hidden_widths, 0.0, config.loss_scale, &mut init)?;
                net.add_head(t, task.classes, &mut init)?;
                let free = CumulativeMask::zeros(&net.layer_shapes());
                let loss = train_task(&mut net, task, t, config, &free, None, &mut streams.train)
                    .map_err(|e| e.in_task(t))?;
                final_losses.push(loss);
                let artifact = TaskArtifact::dense(&net, t)?;
                own.push(evaluate(&net, &artifact, &task.test)?);
                info!("multitask task {t}: loss {loss:.4}, accuracy {}", own[t]);
                matrix.push_row(own.clone())?;
                wall_clock.push(started.elapsed().as_secs_f64());
            }
        }
    }
    let mut report = RunReport::new(strategy, config.seed, matrix, config.fwt_range)?;
    report.final_losses = final_losses;
    report.wall_clock = wall_clock;
    Ok(report)
}

/// Runs IBM and, when configured, the multi-task baseline that FWT is measured against.
pub fn run_with_fwt(config: &RunConfig, tasks: &[TaskDataset]) -> Result<RunOutput> {
    let mut out = run_sequence_on(config, tasks)?;
    if config.multitask_baseline {
        let mt = run_baseline_on(config, tasks, Strategy::Multitask)?;
        out.report.attach_multitask(mt.accuracy.diagonal())?;
    }
    Ok(out)
}

fn check_tasks(tasks: &[TaskDataset]) -> Result<()> {
    let first = tasks.first().ok_or(IbmError::Empty("task sequence"))?;
    for t in tasks {
        t.validate().map_err(|e| e.in_task(t.task_id))?;
        if t.input_width() != first.input_width() || t.test.x.cols() != first.input_width() {
            return Err(IbmError::ShapeMismatch {
                context: "task input width",
                expected: (0, first.input_width()),
                found: (0, t.input_width()),
            }
            .in_task(t.task_id));
        }
    }
    Ok(())
}

/// Trains one task for `epochs_per_task` epochs; returns the mean loss of the last epoch.
fn train_task(
    net: &mut Network,
    task: &TaskDataset,
    head: usize,
    config: &RunConfig,
    frozen: &CumulativeMask,
    mut schedule: Option<&mut CompressionSchedule>,
    rng: &mut SeededRng,
) -> Result<f64> {
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let probe = task.train.head_rows(config.probe_rows);
    let n = task.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_epoch_loss = f64::NAN;
    for epoch in 1..=config.epochs_per_task {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let x = task.train.x.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| task.train.y[i]).collect();
            total += net.train_step(&mut adam, &x, &y, head, frozen, rng)?;
            batches += 1;
        }
        last_epoch_loss = total / batches as f64;
        if let Some(s) = schedule.as_deref_mut() {
            update_schedule(net, s, &probe, epoch)?;
        }
    }
    Ok(last_epoch_loss)
}

/// Test accuracy of one task through the given artifact.
pub fn evaluate(net: &Network, artifact: &TaskArtifact, split: &Split) -> Result<f64> {
    let predictions = net.predict(&split.x, artifact.task_id, artifact)?;
    Ok(accuracy(&predictions, &split.y))
}

/// Accuracy on every task in `tasks` through its artifact in `pool`.
pub fn evaluate_pool(net: &Network, pool: &MemoryPool, tasks: &[TaskDataset]) -> Result<Vec<f64>> {
    tasks
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let artifact = pool.get(i).ok_or(IbmError::UnknownTask(i))?;
            evaluate(net, artifact, &task.test)
        })
        .collect()
}

/// Fraction of selected first-layer weights whose input dimension is in `informative`.
/// `None` when nothing is selected.
pub fn first_layer_precision(artifact: &TaskArtifact, informative: &[usize]) -> Option<f64> {
    let mask: &Matrix = artifact.masks.layers.first()?;
    let (mut hits, mut selected) = (0usize, 0usize);
    for r in 0..mask.rows() {
        for (c, &v) in mask.row(r).iter().enumerate() {
            if v != 0.0 {
                selected += 1;
                if informative.contains(&c) {
                    hits += 1;
                }
            }
        }
    }
    (selected > 0).then(|| hits as f64 / selected as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::GaussianSpec;

    fn small_config(seed: u64) -> RunConfig {
        RunConfig {
            seed,
            epochs_per_task: 4,
            batch_size: 32,
            hidden_widths: vec![16, 16],
            fd_interval: 2,
            data: DataSpec::SplitGaussians(GaussianSpec {
                tasks: 3,
                dims: 12,
                informative_per_task: 4,
                train_per_task: 128,
                test_per_task: 200,
                separation: 4.0,
            }),
            ..RunConfig::default()
        }
    }

    #[test]
    fn earlier_tasks_are_never_forgotten() {
        let out = run_sequence(&small_config(1)).unwrap();
        let a = &out.report.accuracy;
        for t in 0..a.tasks() {
            for i in 0..=t {
                assert_eq!(a.get(t, i).unwrap().to_bits(), a.get(i, i).unwrap().to_bits());
            }
        }
        assert_eq!(out.report.bwt, Some(0.0));
        assert_eq!(out.report.gamma_history.len(), 3 * 2 * 2);
    }

    #[test]
    fn frozen_cumulative_mask_is_monotone() {
        let out = run_sequence(&small_config(2)).unwrap();
        let shapes = out.net.layer_shapes();
        let mut prev = CumulativeMask::zeros(&shapes);
        for k in 1..=out.pool.len() {
            let now = crate::mask::combine_masks(&out.pool.artifacts[..k], &shapes).unwrap();
            for (a, b) in prev.layers.iter().zip(&now.layers) {
                assert!(a.data().iter().zip(b.data()).all(|(x, y)| y >= x));
            }
            prev = now;
        }
    }

    #[test]
    fn single_task_report() {
        let mut cfg = small_config(3);
        if let DataSpec::SplitGaussians(g) = &mut cfg.data {
            g.tasks = 1;
        }
        let out = run_sequence(&cfg).unwrap();
        assert_eq!(out.report.bwt, None);
        assert_eq!(out.report.acc, out.report.accuracy.get(0, 0).unwrap());
    }

    #[test]
    fn multitask_baseline_never_forgets() {
        let report = run_baseline(&small_config(4), Strategy::Multitask).unwrap();
        assert_eq!(report.bwt, Some(0.0));
        assert!(run_baseline(&small_config(4), Strategy::Ibm).is_err());
    }

    #[test]
    fn precision_counts_informative_columns() {
        let mut rng = SeededRng::new(0);
        let mut net = Network::new(4, &[2], 0.5, crate::network::LossScale::One, &mut rng).unwrap();
        net.add_head(0, 2, &mut rng).unwrap();
        let mut art = TaskArtifact::dense(&net, 0).unwrap();
        art.masks.layers[0] = Matrix::from_rows(&[[1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(first_layer_precision(&art, &[0, 1]), Some(0.75));
        art.masks.layers[0] = Matrix::zeros(2, 4);
        assert_eq!(first_layer_precision(&art, &[0, 1]), None);
    }
}
