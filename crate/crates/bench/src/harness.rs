use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::alloc;
use crate::report::{BenchReport, Cell, Metric, Summary};
use crate::scenario::{Scenario, TraceGen, TEMPERATURE};
use crate::testbed::{ret_rule, Testbed};
use crate::BenchError;

fn engine_err(e: impl std::fmt::Display) -> BenchError {
    BenchError::Engine(e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetConfig {
    pub rule_counts: Vec<usize>,
    pub sweeps: usize,
    pub warmup: usize,
    pub scenario: Scenario,
}

impl Default for RetConfig {
    fn default() -> Self {
        Self {
            rule_counts: vec![100, 200, 300, 400, 500],
            sweeps: 30,
            warmup: 3,
            scenario: Scenario::default(),
        }
    }
}

/// For each rule count, deploys that many always-true five-sensor rules and
/// times sweeps: one sensor write plus everything it sets off, until the
/// queue is empty. `extra` is the mean time per rule.
pub fn run_ret(cfg: &RetConfig) -> Result<BenchReport, BenchError> {
    let mut cells = Vec::new();
    for &n in &cfg.rule_counts {
        let bed = Testbed::virtual_clock(&cfg.scenario)?;
        let rooms = &bed.fixture.rooms;
        if rooms.len() < 5 {
            return Err(BenchError::BadScenario("RET needs at least five rooms".into()));
        }
        let sensors: Vec<&str> = rooms.iter().take(5).map(|r| r.sensor.as_str()).collect();
        for i in 0..n {
            let (name, src) = ret_rule(i, &sensors, &rooms[i % rooms.len()].heater);
            bed.deploy(&name, &src)?;
        }
        let mut value = bed.fixture.initial[0];
        let mut totals = Vec::with_capacity(cfg.sweeps);
        for sweep in 0..cfg.warmup + cfg.sweeps {
            value = if value > 30.0 { 20.0 } else { value + 0.5 };
            let before = bed.engine.notifications().total();
            let t0 = Instant::now();
            bed.engine.device_write(sensors[0], TEMPERATURE, value).map_err(engine_err)?;
            bed.engine.run_until_idle();
            let elapsed = t0.elapsed().as_secs_f64() * 1e3;
            let fired = bed.engine.notifications().total() - before;
            if fired != n as u64 {
                return Err(BenchError::Engine(format!("sweep fired {fired} of {n} rules")));
            }
            if sweep >= cfg.warmup {
                totals.push(elapsed);
            }
        }
        let summary = Summary::of(&totals);
        cells.push(Cell { rules: n, rate: 0.0, extra: summary.mean / n.max(1) as f64, summary });
    }
    Ok(BenchReport {
        metric: Metric::Ret,
        unit: "ms",
        extra_label: "per_rule_ms",
        clock: "monotonic",
        cells,
        csv_path: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RltConfig {
    pub rule_counts: Vec<usize>,
    /// Events per second per rule.
    pub rates: Vec<f64>,
    pub duration: Duration,
    pub scenario: Scenario,
}

impl RltConfig {
    /// Reduced grid for desk runs.
    pub fn desk() -> Self {
        Self {
            rule_counts: vec![1, 10, 100, 400],
            rates: vec![5.0, 11.0, 30.0, 200.0],
            duration: Duration::from_secs(10),
            scenario: Scenario::default(),
        }
    }

    /// The full grid at two minutes per cell.
    pub fn full_scale() -> Self {
        Self {
            rule_counts: vec![1, 10, 30, 50, 70, 90, 100, 200, 300, 400],
            rates: vec![5.0, 10.0, 11.0, 15.0, 20.0, 30.0, 100.0, 200.0],
            duration: Duration::from_secs(120),
            scenario: Scenario::default(),
        }
    }
}

/// Runs one wall-clock cell and returns the latencies in milliseconds.
fn rlt_cell(scenario: &Scenario, rules: usize, rate: f64, duration: Duration) -> Result<Vec<f64>, BenchError> {
    let s = Scenario { rate, duration, ..scenario.clone() };
    s.validate()?;
    let bed = Testbed::wall_clock(&s)?;
    bed.deploy_comfort_rules(rules)?;
    let latencies: Arc<Mutex<Vec<f64>>> = Arc::default();
    {
        let lat = latencies.clone();
        bed.engine
            .submit(move |core| {
                core.runtime.set_callback_probe(move |_rule, enqueued| {
                    if let Some(t) = enqueued {
                        lat.lock().unwrap().push(t.elapsed().as_secs_f64() * 1e3);
                    }
                })
            })
            .map_err(engine_err)?;
    }
    let monitored = rules.min(bed.fixture.rooms.len());
    let sensors: Vec<String> = bed.fixture.rooms.iter().take(monitored).map(|r| r.sensor.clone()).collect();
    let mut trace = TraceGen::new(&s, &bed.fixture.initial);
    // sensors are independent: sensor j is phase-shifted by j/n of a period
    let period = Duration::from_secs_f64(1.0 / rate);
    let slot = period / monitored.max(1) as u32;
    let start = Instant::now();
    let mut tick = 0u32;
    while start.elapsed() < duration {
        let values = trace.next_tick(monitored);
        for (j, (sensor, v)) in sensors.iter().zip(values).enumerate() {
            let due = start + period * tick + slot * j as u32;
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
            bed.engine.device_write(sensor, TEMPERATURE, v).map_err(engine_err)?;
        }
        tick += 1;
    }
    // a command is processed after every event queued before it
    bed.engine.submit(|_| ()).map_err(engine_err)?;
    bed.engine.shutdown();
    let out = std::mem::take(&mut *latencies.lock().unwrap());
    Ok(out)
}

/// Latency from event enqueue to callback entry for every grid cell, on the
/// wall clock with generated events. `extra` is the achieved callback rate
/// per second.
pub fn run_rlt(cfg: &RltConfig) -> Result<BenchReport, BenchError> {
    let mut cells = Vec::new();
    for &n in &cfg.rule_counts {
        for &rate in &cfg.rates {
            let lat = rlt_cell(&cfg.scenario, n, rate, cfg.duration)?;
            let summary = Summary::of(&lat);
            cells.push(Cell {
                rules: n,
                rate,
                extra: lat.len() as f64 / cfg.duration.as_secs_f64(),
                summary,
            });
        }
    }
    Ok(BenchReport {
        metric: Metric::Rlt,
        unit: "ms",
        extra_label: "callbacks_per_s",
        clock: "wall",
        cells,
        csv_path: None,
    })
}

/// Virtual-clock replay of an RLT scenario: the order in which rule
/// callbacks ran over `ticks` generation rounds.
pub fn rlt_callback_log(scenario: &Scenario, rules: usize, ticks: usize) -> Result<Vec<String>, BenchError> {
    scenario.validate()?;
    let bed = Testbed::virtual_clock(scenario)?;
    bed.deploy_comfort_rules(rules)?;
    let log: Arc<Mutex<Vec<String>>> = Arc::default();
    {
        let log = log.clone();
        bed.engine
            .submit(move |core| core.runtime.set_callback_probe(move |rule, _| log.lock().unwrap().push(rule.to_owned())))
            .map_err(engine_err)?;
    }
    let monitored = rules.min(bed.fixture.rooms.len());
    let mut trace = TraceGen::new(scenario, &bed.fixture.initial);
    let period_ms = 1000.0 / scenario.rate;
    for k in 0..ticks {
        bed.engine.advance_to((k as f64 * period_ms).round() as u64);
        for (room, v) in bed.fixture.rooms.iter().take(monitored).zip(trace.next_tick(monitored)) {
            bed.engine.device_write(&room.sensor, TEMPERATURE, v).map_err(engine_err)?;
        }
        bed.engine.run_until_idle();
    }
    let out = log.lock().unwrap().clone();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemorySource {
    /// Exact live-byte counts from [`alloc::CountingAlloc`].
    Allocator,
    /// Resident set size; coarse and noisy.
    Rss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmuConfig {
    pub rule_counts: Vec<usize>,
    pub runs: usize,
    pub scenario: Scenario,
}

impl Default for RmuConfig {
    fn default() -> Self {
        Self { rule_counts: vec![0, 100, 200, 400], runs: 3, scenario: Scenario::default() }
    }
}

/// Memory delta from a loaded but rule-less engine to the same engine with
/// `n` comfort rules installed and started, in KB. Package bytes are built
/// before the baseline is taken. `extra` is KB per rule.
pub fn run_rmu(cfg: &RmuConfig) -> Result<(BenchReport, MemorySource), BenchError> {
    let source = if alloc::installed() { MemorySource::Allocator } else { MemorySource::Rss };
    let sample = || -> f64 {
        match source {
            MemorySource::Allocator => alloc::thread_live_bytes() as f64,
            MemorySource::Rss => alloc::rss_bytes().unwrap_or(0) as f64,
        }
    };
    let mut cells = Vec::new();
    for &n in &cfg.rule_counts {
        let mut deltas = Vec::with_capacity(cfg.runs);
        for _ in 0..cfg.runs {
            let bed = Testbed::virtual_clock(&cfg.scenario)?;
            let packages: Vec<(String, Vec<u8>)> = (0..n)
                .map(|i| {
                    let (name, src) = crate::testbed::comfort_rule(i, &bed.fixture.rooms[i % bed.fixture.rooms.len()]);
                    bed.package(&name, &src).map(|p| (name, p))
                })
                .collect::<Result<_, _>>()?;
            let base = sample();
            for (name, pkg) in &packages {
                bed.install_and_start(name, pkg)?;
            }
            bed.engine.run_until_idle();
            deltas.push((sample() - base) / 1024.0);
            drop(packages);
        }
        let summary = Summary::of(&deltas);
        cells.push(Cell { rules: n, rate: 0.0, extra: summary.mean / n.max(1) as f64, summary });
    }
    let clock = match source {
        MemorySource::Allocator => "allocator",
        MemorySource::Rss => "rss",
    };
    Ok((
        BenchReport { metric: Metric::Rmu, unit: "KB", extra_label: "kb_per_rule", clock, cells, csv_path: None },
        source,
    ))
}
