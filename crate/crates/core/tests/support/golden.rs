use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ed25519_dalek::SigningKey;
use sre_core::lifecycle::{build_package, PackageSpec, RuleState};
use sre_core::semantic::load_ontology;
use sre_core::{Engine, EngineOptions, Scalar};

pub const SCRIPT: &str = include_str!("../../fixtures/lightcontrol.rs.sre");
pub const COMMISSIONING: &str = include_str!("../../fixtures/golden/commissioning.json");
pub const ONTOLOGY: &str = include_str!("../../fixtures/golden/ontology.json");
pub const ACTUATORS: [&str; 3] = ["LightA", "LightB", "LightC"];

pub fn signing_key() -> SigningKey {
    SigningKey::from_bytes(&[7; 32])
}

pub fn spec(version: &str, threshold: f64) -> PackageSpec {
    PackageSpec {
        name: "LightControl".into(),
        version: version.into(),
        description: Some("keeps Site1 lit".into()),
        params: BTreeMap::from([("threshold".to_string(), Some(Scalar::Number(threshold)))]),
    }
}

pub fn package(version: &str, threshold: f64) -> Vec<u8> {
    build_package(SCRIPT, &spec(version, threshold), &signing_key()).expect("fixture package builds")
}

/// Virtual-clock engine loaded with the golden fixture.
pub fn engine(state_dir: &std::path::Path) -> Engine {
    let onto = load_ontology(ONTOLOGY).expect("fixture ontology");
    let opts = EngineOptions::new(state_dir, vec![signing_key().verifying_key()]);
    let engine = Engine::with_virtual_clock(0, onto, opts).expect("engine");
    engine.registry().load_commissioning(COMMISSIONING).expect("fixture commissioning");
    engine.run_until_idle();
    engine
}

pub fn setpoint(engine: &Engine, id: &str) -> f64 {
    engine
        .registry()
        .value_of(id, "LuminositySetPoint")
        .and_then(|v| v.as_f64())
        .expect("actuator has a numeric set point")
}

pub fn setpoints(engine: &Engine) -> Vec<f64> {
    ACTUATORS.iter().map(|id| setpoint(engine, id)).collect()
}

#[derive(Debug)]
pub struct GoldenOutcome {
    pub initial: Vec<f64>,
    pub after_first_cycle: Vec<f64>,
    pub after_update: Vec<f64>,
    pub outside_site: f64,
    pub elapsed: Duration,
}

/// Installs and starts LightControl, lets one Control cycle run, sets the
/// threshold to 650 and lets the next cycle run.
pub fn run() -> Result<GoldenOutcome, String> {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let engine = engine(dir.path());
    let initial = setpoints(&engine);
    engine.install(&package("1.0.0", 600.0)).map_err(|e| e.to_string())?;
    let rec = engine.start("LightControl").map_err(|e| e.to_string())?;
    if rec.state != RuleState::Started {
        return Err(format!("rule is {:?} after start", rec.state));
    }
    engine.advance_to(500);
    let after_first_cycle = setpoints(&engine);
    engine
        .set_param("LightControl", "threshold", Scalar::Number(650.0))
        .map_err(|e| e.to_string())?;
    engine.advance_to(2500);
    let after_update = setpoints(&engine);
    Ok(GoldenOutcome {
        initial,
        after_first_cycle,
        after_update,
        outside_site: setpoint(&engine, "LightZ"),
        elapsed: started.elapsed(),
    })
}

/// Hand execution of one Control cycle: if the Site1 average is below the
/// threshold, raise every Site1 set point below it to the threshold.
pub fn expected_cycle(luminosities: &[f64], setpoints: &[f64], threshold: f64) -> Vec<f64> {
    let avg = luminosities.iter().sum::<f64>() / luminosities.len() as f64;
    if avg >= threshold {
        return setpoints.to_vec();
    }
    setpoints.iter().map(|&s| if threshold - s > 0.0 { threshold } else { s }).collect()
}
