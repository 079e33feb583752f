use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::Splits;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::io::{write_metrics, write_snapshots};
use crate::harness::records::{MetricsRecord, SnapshotRow};
use crate::lossnet::LossNetwork;
use crate::metaloop::{offline_init, online_train, RunSettings, TrainMode};
use crate::models::BaseModel;
use crate::tensor::Tensor;

/// XORed into the run seed to seed the loss network.
pub const LOSSNET_SEED_OFFSET: u64 = 0x4C4F_5353_4E45_5430;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SNAPSHOTS_FILE: &str = "snapshots.csv";
pub const LOSS_NET_FILE: &str = "loss_net.json";

pub fn run_id(mode: TrainMode, seed: u64) -> String {
    format!("{}-seed{seed}", mode.label())
}

/// Everything one (mode, seed) cell produced.
#[derive(Clone, Debug)]
pub struct CellOutput {
    pub mode: TrainMode,
    pub seed: u64,
    pub run_id: String,
    pub theta0: Vec<Tensor>,
    pub model: BaseModel,
    pub offline_losses: Vec<f64>,
    pub net: Option<LossNetwork>,
    pub metrics: Vec<MetricsRecord>,
    pub snapshots: Vec<SnapshotRow>,
    pub theta_log: Vec<(usize, Vec<Tensor>)>,
    pub theta_updates: usize,
    pub phi_updates: usize,
}

/// Runs one cell. The base initialization depends on `seed` only, so every
/// mode starts from the same parameters.
pub fn run_cell(cfg: &ExperimentConfig, splits: &Splits, mode: TrainMode, seed: u64) -> Result<CellOutput> {
    let id = run_id(mode, seed);
    let wrap = |e: Error| Error::Run {
        run_id: id.clone(),
        source: Box::new(e),
    };
    let model = BaseModel::init(cfg.arch.clone(), seed).map_err(wrap)?;
    let (net, offline_losses) = if mode.uses_loss_net() {
        let net0 =
            LossNetwork::init(seed ^ LOSSNET_SEED_OFFSET, cfg.loss_net.width, cfg.loss_net.mode).map_err(wrap)?;
        let out = offline_init(&net0, &model, splits, &cfg.meta, cfg.batch_size, seed).map_err(wrap)?;
        (Some(out.net), out.task_losses)
    } else {
        (None, Vec::new())
    };
    let settings = RunSettings {
        run_id: id.clone(),
        seed,
        batch_size: cfg.batch_size,
        log_interval: cfg.log_interval,
        snapshot_interval: cfg.snapshot_interval,
        train_eval_limit: cfg.train_eval_limit,
        record_theta: cfg.record_theta,
        clock: cfg.clock,
    };
    log::info!("{id}: training for {} steps", cfg.meta.s_train);
    let trained = online_train(mode, net.as_ref(), &model, splits, &cfg.meta, &settings).map_err(wrap)?;
    Ok(CellOutput {
        mode,
        seed,
        run_id: id,
        theta0: model.params,
        model: trained.model,
        offline_losses,
        net: trained.net,
        metrics: trained.metrics,
        snapshots: trained.snapshots,
        theta_log: trained.theta_log,
        theta_updates: trained.theta_updates,
        phi_updates: trained.phi_updates,
    })
}

pub fn cell_dir(out_dir: &Path, mode: TrainMode, seed: u64) -> PathBuf {
    out_dir.join(mode.label()).join(seed.to_string())
}

/// Writes `<out>/<mode>/<seed>/metrics.csv`, plus the snapshots and the final
/// loss network for loss-network modes.
pub fn write_cell(out_dir: &Path, cell: &CellOutput) -> Result<PathBuf> {
    let dir = cell_dir(out_dir, cell.mode, cell.seed);
    write_metrics(&dir.join(METRICS_FILE), &cell.metrics)?;
    if let Some(net) = &cell.net {
        write_snapshots(&dir.join(SNAPSHOTS_FILE), &cell.snapshots)?;
        let path = dir.join(LOSS_NET_FILE);
        fs::write(&path, net.to_json()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(dir)
}

pub fn load_loss_net(path: &Path) -> Result<LossNetwork> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    LossNetwork::from_json(&text)
}

/// Runs every (mode, seed) cell in parallel and writes their outputs under
/// `cfg.out_dir`. Cells are returned in (mode, seed) config order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<CellOutput>> {
    cfg.validate()?;
    let splits = cfg.load_splits()?;
    let cells: Vec<(TrainMode, u64)> = cfg
        .modes
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let outputs: Vec<CellOutput> = cells
        .par_iter()
        .map(|&(mode, seed)| {
            let cell = run_cell(cfg, &splits, mode, seed)?;
            write_cell(&cfg.out_dir, &cell).map_err(|e| Error::Run {
                run_id: cell.run_id.clone(),
                source: Box::new(e),
            })?;
            Ok(cell)
        })
        .collect::<Result<_>>()?;
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::DatasetSpec;
    use crate::harness::records::ClockMode;
    use crate::models::Arch;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            DatasetSpec::SyntheticClassification {
                n_train: 80,
                n_test: 20,
                features: 3,
                classes: 3,
                separation: 4.0,
                seed: 5,
            },
            Arch::Logistic {
                in_dim: 3,
                n_classes: 3,
            },
        );
        cfg.modes = TrainMode::ALL.to_vec();
        cfg.seeds = vec![7, 8];
        cfg.batch_size = 16;
        cfg.log_interval = 10;
        cfg.snapshot_interval = 10;
        cfg.loss_net.width = 6;
        cfg.meta.s_init = 5;
        cfg.meta.s_train = 20;
        cfg.clock = ClockMode::Logical;
        cfg
    }

    #[test]
    fn modes_share_initial_parameters() {
        let cfg = small();
        let splits = cfg.load_splits().unwrap();
        let a = run_cell(&cfg, &splits, TrainMode::BaselineCe, 7).unwrap();
        let b = run_cell(&cfg, &splits, TrainMode::OnlineAdalfl, 7).unwrap();
        let c = run_cell(&cfg, &splits, TrainMode::BaselineCe, 8).unwrap();
        assert_eq!(a.theta0, b.theta0);
        assert_ne!(a.theta0, c.theta0);
        assert_eq!(b.theta_updates, 20);
        assert_eq!(b.phi_updates, 20);
        assert_eq!(a.phi_updates, 0);
        assert_eq!(b.offline_losses.len(), 5);
    }

    #[test]
    fn experiment_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.out_dir = dir.path().to_path_buf();
        let cells = run_experiment(&cfg).unwrap();
        assert_eq!(cells.len(), 6);
        for cell in &cells {
            let d = cell_dir(dir.path(), cell.mode, cell.seed);
            assert!(d.join(METRICS_FILE).is_file());
            assert_eq!(d.join(SNAPSHOTS_FILE).is_file(), cell.mode.uses_loss_net());
            if cell.mode.uses_loss_net() {
                let net = load_loss_net(&d.join(LOSS_NET_FILE)).unwrap();
                assert_eq!(Some(net), cell.net);
            }
        }
    }

    #[test]
    fn errors_carry_run_identity() {
        let mut cfg = small();
        cfg.meta.inner.alpha = 1e200;
        let splits = cfg.load_splits().unwrap();
        match run_cell(&cfg, &splits, TrainMode::BaselineCe, 7) {
            Err(Error::Run { run_id, source }) => {
                assert_eq!(run_id, "baseline_ce-seed7");
                assert!(matches!(*source, Error::Divergence { .. }), "{source}");
            }
            other => panic!("expected a run error, got {other:?}"),
        }
    }
}
