use std::collections::BTreeMap;
use std::sync::Arc;

use ed25519_dalek::SigningKey;
use sre_core::lifecycle::{build_package, PackageSpec};
use sre_core::semantic::load_ontology;
use sre_core::{Engine, EngineOptions, WallClock};

use crate::scenario::{generate_fixture, Fixture, Room, Scenario, SWITCH, TEMPERATURE};
use crate::BenchError;

/// Change-triggered comfort rule for one room: heater on below 20 degrees,
/// air conditioning on above 24.
pub fn comfort_rule(index: usize, room: &Room) -> (String, String) {
    let name = format!("Comfort{index}");
    let src = format!(
        "function {name}.init()\n  engine.subscribe(\"@change[{sensor}]{TEMPERATURE} == True\", \"React\")\nend\n\n\
         function {name}.React(id, capability, value)\n  engine.setValue(\"{heater}\", \"{SWITCH}\", value < 20)\n  \
         engine.setValue(\"{cooler}\", \"{SWITCH}\", value > 24)\nend\n",
        sensor = room.sensor,
        heater = room.heater,
        cooler = room.cooler,
    );
    (name, src)
}

/// Rule whose condition spans five sensors and always holds; its action
/// toggles one actuator and sends a notification.
pub fn ret_rule(index: usize, sensors: &[&str], actuator: &str) -> (String, String) {
    let name = format!("Sweep{index}");
    let cond: Vec<String> = sensors.iter().map(|s| format!("[{s}]{TEMPERATURE} > -1000")).collect();
    let src = format!(
        "function {name}.init()\n  toggled = false\n  engine.subscribe(\"{cond}\", \"Act\")\nend\n\n\
         function {name}.Act(id, capability, value)\n  toggled = not toggled\n  \
         engine.setValue(\"{actuator}\", \"{SWITCH}\", toggled)\n  engine.notify(\"info\", \"{name} fired on\", id)\nend\n",
        cond = cond.join(" AND "),
    );
    (name, src)
}

/// An engine loaded with a generated building fixture.
pub struct Testbed {
    pub engine: Engine,
    pub fixture: Fixture,
    key: SigningKey,
    _dir: tempfile::TempDir,
}

impl Testbed {
    fn build(scenario: &Scenario, wall: bool) -> Result<Self, BenchError> {
        if !scenario.actuators {
            return Err(BenchError::BadScenario("benchmark rules need the room actuators".into()));
        }
        let fixture = generate_fixture(scenario)?;
        let dir = tempfile::tempdir().map_err(|e| BenchError::Io(e.to_string()))?;
        let key = SigningKey::from_bytes(&[0x5E; 32]);
        let ontology = load_ontology(&fixture.ontology).map_err(|e| BenchError::Engine(e.to_string()))?;
        let mut opts = EngineOptions::new(dir.path(), vec![key.verifying_key()]);
        opts.queue_capacity = 1 << 16;
        let engine = if wall {
            Engine::with_clock(Arc::new(WallClock), ontology, opts)
        } else {
            Engine::with_virtual_clock(0, ontology, opts)
        }
        .map_err(|e| BenchError::Engine(e.to_string()))?;
        engine
            .registry()
            .load_commissioning(&fixture.commissioning)
            .map_err(|e| BenchError::Engine(e.to_string()))?;
        if wall {
            engine.spawn_scheduler().map_err(|e| BenchError::Engine(e.to_string()))?;
        } else {
            engine.run_until_idle();
        }
        Ok(Self { engine, fixture, key, _dir: dir })
    }

    /// Engine on a virtual clock, driven by the caller.
    pub fn virtual_clock(scenario: &Scenario) -> Result<Self, BenchError> {
        Self::build(scenario, false)
    }

    /// Engine on the wall clock with its own scheduler thread.
    pub fn wall_clock(scenario: &Scenario) -> Result<Self, BenchError> {
        Self::build(scenario, true)
    }

    pub fn package(&self, name: &str, src: &str) -> Result<Vec<u8>, BenchError> {
        let spec = PackageSpec { name: name.into(), version: "1".into(), description: None, params: BTreeMap::new() };
        build_package(src, &spec, &self.key).map_err(|e| BenchError::Engine(e.to_string()))
    }

    pub fn install_and_start(&self, name: &str, package: &[u8]) -> Result<(), BenchError> {
        self.engine.install(package).map_err(|e| BenchError::Engine(e.to_string()))?;
        self.engine.start(name).map_err(|e| BenchError::Engine(e.to_string()))?;
        Ok(())
    }

    pub fn deploy(&self, name: &str, src: &str) -> Result<(), BenchError> {
        let pkg = self.package(name, src)?;
        self.install_and_start(name, &pkg)
    }

    /// Deploys `n` comfort rules, rule `i` watching room `i mod rooms`.
    pub fn deploy_comfort_rules(&self, n: usize) -> Result<(), BenchError> {
        for i in 0..n {
            let room = &self.fixture.rooms[i % self.fixture.rooms.len()];
            let (name, src) = comfort_rule(i, room);
            self.deploy(&name, &src)?;
        }
        Ok(())
    }
}
