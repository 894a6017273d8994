//! Building topology, fixture documents and deterministic value traces.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::BenchError;

#[derive(Debug, Clone, PartialEq)]
pub enum ValueProcess {
    /// Each write moves the previous value by up to `step` in either direction.
    RandomWalk { step: f64 },
    /// Values replayed in order for every sensor, wrapping around.
    Scripted(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub buildings: u32,
    pub floors: u32,
    pub rooms: u32,
    /// Commission a heater and an air conditioner next to every sensor.
    pub actuators: bool,
    /// Events per second for every monitored sensor.
    pub rate: f64,
    pub duration: Duration,
    pub process: ValueProcess,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 42,
            buildings: 3,
            floors: 10,
            rooms: 3,
            actuators: true,
            rate: 10.0,
            duration: Duration::from_secs(10),
            process: ValueProcess::RandomWalk { step: 0.5 },
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.buildings == 0 || self.floors == 0 || self.rooms == 0 {
            return Err(BenchError::BadScenario("topology needs at least one room".into()));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(BenchError::BadScenario(format!("event rate must be positive, got {}", self.rate)));
        }
        if let ValueProcess::Scripted(v) = &self.process {
            if v.is_empty() {
                return Err(BenchError::BadScenario("scripted trace is empty".into()));
            }
        }
        Ok(())
    }

    pub fn room_count(&self) -> usize {
        (self.buildings * self.floors * self.rooms) as usize
    }
}

/// A room and the three things in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    pub location: String,
    pub sensor: String,
    pub heater: String,
    pub cooler: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub commissioning: String,
    pub ontology: String,
    pub rooms: Vec<Room>,
    pub initial: Vec<f64>,
}

pub const SITE: &str = "Site";
pub const TEMPERATURE: &str = "Temperature";
pub const SWITCH: &str = "On";

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Rooms within floors within buildings within the site; one temperature
/// sensor, heater and air conditioner per room.
pub fn generate_fixture(s: &Scenario) -> Result<Fixture, BenchError> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut nodes = vec![SITE.to_string()];
    let mut edges = Vec::new();
    let mut things = Vec::new();
    let mut rooms = Vec::new();
    let mut initial = Vec::new();
    let within = |child: &str, parent: &str| json!({"child": child, "relation": "within", "parent": parent});
    for b in 1..=s.buildings {
        let building = format!("B{b}");
        edges.push(within(&building, SITE));
        nodes.push(building.clone());
        for f in 1..=s.floors {
            let floor = format!("{building}-F{f:02}");
            edges.push(within(&floor, &building));
            nodes.push(floor.clone());
            for r in 1..=s.rooms {
                let location = format!("{floor}-R{r}");
                edges.push(within(&location, &floor));
                nodes.push(location.clone());
                let room = Room {
                    sensor: format!("T-{location}"),
                    heater: format!("H-{location}"),
                    cooler: format!("AC-{location}"),
                    location,
                };
                let t0 = round1(rng.gen_range(18.0..26.0));
                initial.push(t0);
                things.push(json!({
                    "id": room.sensor,
                    "tags": {"location": room.location, "usage": "TemperatureSensor"},
                    "capabilities": [{"name": TEMPERATURE, "type": "number", "value": t0, "unit": "C"}]
                }));
                let actuators = [(&room.heater, "Heater"), (&room.cooler, "AirConditioner")];
                for (id, usage) in actuators.into_iter().filter(|_| s.actuators) {
                    things.push(json!({
                        "id": id,
                        "tags": {"location": room.location, "usage": usage},
                        "capabilities": [{"name": SWITCH, "type": "bool", "value": false, "writable": true}]
                    }));
                }
                rooms.push(room);
            }
        }
    }
    let commissioning = json!({"measurements": {"TemperatureSensor": TEMPERATURE}, "things": things});
    let ontology = json!({"relations": {"location": "within", "usage": "subTypeOf"}, "nodes": nodes, "edges": edges});
    Ok(Fixture {
        commissioning: serde_json::to_string_pretty(&commissioning).expect("json"),
        ontology: serde_json::to_string_pretty(&ontology).expect("json"),
        rooms,
        initial,
    })
}

/// Deterministic per-sensor value source. Consecutive values of a sensor
/// always differ so that every write produces an event.
#[derive(Debug, Clone)]
pub struct TraceGen {
    rng: ChaCha8Rng,
    process: ValueProcess,
    current: Vec<f64>,
    tick: usize,
}

impl TraceGen {
    pub fn new(scenario: &Scenario, initial: &[f64]) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x7E11_0000),
            process: scenario.process.clone(),
            current: initial.to_vec(),
            tick: 0,
        }
    }

    /// Next value for each of the first `sensors` sensors.
    pub fn next_tick(&mut self, sensors: usize) -> Vec<f64> {
        let tick = self.tick;
        self.tick += 1;
        (0..sensors.min(self.current.len()))
            .map(|i| {
                let prev = self.current[i];
                let mut v = match &self.process {
                    ValueProcess::RandomWalk { step } => {
                        round1((prev + self.rng.gen_range(-step..=*step)).clamp(10.0, 35.0))
                    }
                    ValueProcess::Scripted(values) => values[(tick + i) % values.len()],
                };
                if v == prev {
                    v = round1(if prev < 35.0 { prev + 0.1 } else { prev - 0.1 });
                }
                self.current[i] = v;
                v
            })
            .collect()
    }
}
