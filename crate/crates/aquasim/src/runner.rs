//! Scenario dispatch and sweep orchestration.

use thiserror::Error;

use crate::config::{with_param, ConfigError, RunConfig};
use crate::metrics::MetricsReport;
use crate::scenarios::{
    run_abr_offload, run_c2c, run_evolved_bs, run_mptcp_proxy, run_offload, run_streaming,
    ScenarioError,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Run one scenario with one seed. Most scenarios yield one report; the
/// evolved-BS pair yields base and evolved.
pub fn run_scenario(cfg: &RunConfig, seed: u64) -> Result<Vec<MetricsReport>, ScenarioError> {
    let net = &cfg.topology.links;
    let clones = &cfg.clone_params;
    match cfg.scenario.as_str() {
        "streaming" => {
            let spec = cfg.streaming.as_ref().expect("validated");
            Ok(vec![run_streaming(spec, net, clones, seed)?])
        }
        "c2c" => {
            let spec = cfg.c2c.as_ref().expect("validated").to_spec();
            Ok(vec![run_c2c(&spec, net, clones, seed)?])
        }
        "mptcp" => {
            let spec = cfg.mptcp.as_ref().expect("validated");
            let (_outcome, report) = run_mptcp_proxy(spec, seed)?;
            Ok(vec![report])
        }
        "abr" => {
            let abr = cfg.abr.as_ref().expect("validated");
            // The clone reads the device's link state off the base station:
            // the measured rate is the configured downlink rate unless
            // overridden.
            let measured = abr.measured_rate.unwrap_or(net.access_down.rate_bps);
            let (_chosen, report) = run_abr_offload(&abr.to_ladder(), measured, net, clones, seed)?;
            Ok(vec![report])
        }
        "offload" => Ok(vec![run_offload(
            &cfg.task_list(),
            cfg.allocation.as_ref(),
            net,
            clones,
            "offload",
            seed,
        )?]),
        "evolved_bs" => {
            let (base, evolved) =
                run_evolved_bs(&cfg.task_list(), cfg.allocation.as_ref(), net, clones, seed)?;
            Ok(vec![base, evolved])
        }
        other => unreachable!("scenario `{other}` passed validation"),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub reports: Vec<MetricsReport>,
}

/// Run every configured seed in order.
pub fn run_config(cfg: &RunConfig) -> Result<Vec<RunOutput>, ScenarioError> {
    cfg.seed_list()
        .into_iter()
        .map(|seed| run_scenario(cfg, seed).map(|reports| RunOutput { seed, reports }))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub param: String,
    pub value: String,
    pub runs: Vec<RunOutput>,
}

/// Run the config once per swept value, tagging every report with the
/// swept key/value. The parallel path fans out one thread per value and
/// joins in input order, so its output bytes match the serial path.
pub fn sweep(
    config_text: &str,
    param: &str,
    values: &[String],
    parallel: bool,
) -> Result<Vec<SweepOutput>, RunError> {
    let configs: Vec<(String, RunConfig)> = values
        .iter()
        .map(|v| with_param(config_text, param, v).map(|cfg| (v.clone(), cfg)))
        .collect::<Result<_, _>>()?;

    let results: Vec<Result<Vec<RunOutput>, ScenarioError>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = configs
                .iter()
                .map(|(_, cfg)| scope.spawn(move || run_config(cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    } else {
        configs.iter().map(|(_, cfg)| run_config(cfg)).collect()
    };

    configs
        .into_iter()
        .zip(results)
        .map(|((value, _), result)| {
            let mut runs = result?;
            for run in &mut runs {
                for report in &mut run.reports {
                    report.set_sweep_meta(param, value.clone());
                }
            }
            Ok(SweepOutput {
                param: param.to_string(),
                value,
                runs,
            })
        })
        .collect()
}
