use std::path::Path;

use serde_json::json;

use gridsp::commitment::{uc_bruteforce, uc_lagrangian, UcInstance, UcOptions};
use gridsp::dispatch::{chance_ed, dc_opf, economic_dispatch, GenOffer, WindSpec};
use gridsp::flexload::{
    curtail_solve, dr_solve, pev_central as solve_central, pev_distributed as solve_distributed, ChargingProfiles,
    CurtailUser, DrMode, DrOptions, PevFleet,
};

use crate::report::{num, CliError, CliResult, Outcome, Run};

pub fn ed(
    run: &mut Run,
    offers: Option<&Path>,
    case: Option<&Path>,
    demand: Option<f64>,
    wind_forecast: Option<f64>,
    wind: Option<&Path>,
) -> CliResult<Outcome> {
    let (offers, case_load) = match (offers, case) {
        (Some(p), _) => (run.json::<Vec<GenOffer>>(p)?, None),
        (None, Some(p)) => {
            let case = run.case(p)?;
            (GenOffer::from_case(&case), Some(case.bus_loads().0.iter().sum::<f64>()))
        }
        (None, None) => return Err(CliError::Invalid("give --offers or --case".into())),
    };
    let demand = demand
        .or(case_load)
        .ok_or_else(|| CliError::Invalid("--demand is required with --offers".into()))?;
    let sol = match wind {
        Some(p) => {
            let spec: WindSpec = run.json(p)?;
            chance_ed(&offers, demand, &spec)?
        }
        None => economic_dispatch(&offers, demand, wind_forecast)?,
    };
    Outcome::ok(&sol)
}

pub fn opf(run: &mut Run, path: &Path, angle_penalty: f64) -> CliResult<Outcome> {
    let case = run.case(path)?;
    let sol = dc_opf(&case, &GenOffer::from_case(&case), angle_penalty)?;
    run.write_csv(
        "prices.csv",
        &["bus", "lmp", "theta"],
        case.buses()
            .iter()
            .enumerate()
            .map(|(i, b)| [b.id.to_string(), num(sol.lmps[i]), num(sol.theta[i])]),
    )?;
    Outcome::ok(&json!({
        "dispatch": sol.p_gen,
        "lmps": sol.lmps,
        "objective": sol.objective,
        "binding": sol.binding,
        "theta": sol.theta,
        "flows": sol.flows,
    }))
}

pub fn uc(run: &mut Run, path: &Path, iters: usize, levels: usize, bruteforce: bool) -> CliResult<Outcome> {
    let inst = run.parse(path, UcInstance::from_json)?;
    let sched = if bruteforce {
        uc_bruteforce(&inst)?
    } else {
        let opts = UcOptions {
            iterations: iters,
            levels,
            ..UcOptions::default()
        };
        uc_lagrangian(&inst, &opts)?
    };
    let periods = inst.periods();
    let mut rows = Vec::new();
    for (m, (on, out)) in sched.on.iter().zip(&sched.output).enumerate() {
        for t in 0..periods {
            rows.push([m.to_string(), t.to_string(), u8::from(on[t]).to_string(), num(out[t])]);
        }
    }
    run.write_csv("schedule.csv", &["unit", "period", "on", "output"], rows)?;
    if !sched.dual_trace.is_empty() {
        run.write_csv(
            "trace.csv",
            &["iteration", "dual_bound"],
            sched
                .dual_trace
                .iter()
                .enumerate()
                .map(|(k, v)| [(k + 1).to_string(), num(*v)]),
        )?;
    }
    Outcome::ok(&sched)
}

pub fn dr(run: &mut Run, path: &Path, mode: DrMode, iters: usize, step: Option<f64>, tol: f64) -> CliResult<Outcome> {
    let inst = run.parse(path, gridsp::flexload::DrInstance::from_json)?;
    let opts = DrOptions {
        max_iter: iters,
        step,
        price_tol: tol,
    };
    let sol = dr_solve(&inst, mode, &opts)?;
    let demand: Vec<f64> = (0..sol.supply.len())
        .map(|t| sol.consumption.iter().flatten().map(|a| a[t]).sum())
        .collect();
    run.write_csv(
        "prices.csv",
        &["period", "price", "supply", "demand"],
        sol.prices
            .iter()
            .enumerate()
            .map(|(t, p)| [t.to_string(), num(*p), num(sol.supply[t]), num(demand[t])]),
    )?;
    if !sol.trace.is_empty() {
        let periods = sol.prices.len();
        let mut header = vec!["iteration".to_string(), "dual_value".to_string()];
        header.extend((0..periods).map(|t| format!("price_{t}")));
        header.extend((0..periods).map(|t| format!("excess_{t}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        run.write_csv(
            "trace.csv",
            &header,
            sol.trace.iter().map(|it| {
                let mut row = vec![it.iteration.to_string(), num(it.dual_value)];
                row.extend(it.prices.iter().map(|v| num(*v)));
                row.extend(it.excess.iter().map(|v| num(*v)));
                row
            }),
        )?;
    }
    let converged = sol.converged;
    Outcome::with_status(&sol, converged)
}

pub fn curtail(run: &mut Run, path: &Path, deficit: f64) -> CliResult<Outcome> {
    let users: Vec<CurtailUser> = run.json(path)?;
    Outcome::ok(&curtail_solve(&users, deficit)?)
}

fn write_profiles(run: &mut Run, fleet: &PevFleet, sol: &ChargingProfiles) -> CliResult<()> {
    let n = sol.profiles.len();
    let mut header = vec!["slot".to_string(), "base".to_string(), "aggregate".to_string()];
    header.extend((0..n).map(|v| format!("vehicle_{v}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    run.write_csv(
        "profiles.csv",
        &header,
        (0..fleet.base.len()).map(|t| {
            let mut row = vec![t.to_string(), num(fleet.base[t]), num(sol.aggregate[t])];
            row.extend(sol.profiles.iter().map(|r| num(r[t])));
            row
        }),
    )
}

pub fn pev_central(run: &mut Run, path: &Path) -> CliResult<Outcome> {
    let fleet = run.parse(path, PevFleet::from_json)?;
    let sol = solve_central(&fleet)?;
    write_profiles(run, &fleet, &sol)?;
    Outcome::ok(&sol)
}

pub fn pev_distributed(run: &mut Run, path: &Path, iters: usize, tol: f64) -> CliResult<Outcome> {
    let fleet = run.parse(path, PevFleet::from_json)?;
    let sol = solve_distributed(&fleet, iters, tol)?;
    write_profiles(run, &fleet, &sol)?;
    let slots = fleet.base.len();
    let mut header = vec!["iteration".to_string(), "objective".to_string(), "change".to_string()];
    header.extend((0..slots).map(|t| format!("price_{t}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    run.write_csv(
        "trace.csv",
        &header,
        sol.trace.iter().map(|it| {
            let mut row = vec![it.iteration.to_string(), num(it.objective), num(it.change)];
            row.extend(it.price.iter().map(|v| num(*v)));
            row
        }),
    )?;
    let converged = sol.converged;
    Outcome::with_status(&sol, converged)
}
