#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ed25519_dalek::SigningKey;
use sre_core::lifecycle::{build_package, encode_public_key, PackageSpec};
use sre_core::Scalar;
use sre_gateway::{Client, Gateway, GatewayConfig};

pub const ACTUATORS: [&str; 3] = ["LightA", "LightB", "LightC"];

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel)
}

pub fn script() -> String {
    std::fs::read_to_string(fixture("lightcontrol.rs.sre")).unwrap()
}

pub fn key() -> SigningKey {
    SigningKey::from_bytes(&[7; 32])
}

pub fn package(version: &str, threshold: f64) -> Vec<u8> {
    let spec = PackageSpec {
        name: "LightControl".into(),
        version: version.into(),
        description: None,
        params: BTreeMap::from([("threshold".to_string(), Some(Scalar::Number(threshold)))]),
    };
    build_package(&script(), &spec, &key()).unwrap()
}

pub fn package_of(name: &str, source: &str) -> Vec<u8> {
    let spec = PackageSpec { name: name.into(), version: "1".into(), ..PackageSpec::default() };
    build_package(source, &spec, &key()).unwrap()
}

/// Config for the golden fixture on an ephemeral port.
pub fn golden_config(state: &Path) -> GatewayConfig {
    let mut cfg = GatewayConfig::new(
        fixture("golden/commissioning.json"),
        fixture("golden/ontology.json"),
        state,
    );
    cfg.listen = "127.0.0.1:0".parse().unwrap();
    cfg.trusted_keys = vec![encode_public_key(&key().verifying_key())];
    cfg.heartbeat_ms = 200;
    cfg
}

pub struct Running {
    pub gw: Gateway,
    pub client: Client,
    pub dir: tempfile::TempDir,
}

pub fn golden() -> Running {
    let dir = tempfile::tempdir().unwrap();
    let gw = Gateway::start(&golden_config(dir.path())).unwrap();
    let client = Client::new(&gw.base_url());
    Running { gw, client, dir }
}

pub fn setpoint(client: &Client, id: &str) -> f64 {
    client.thing(id).unwrap()["capabilities"]["LuminositySetPoint"]["value"]
        .as_f64()
        .unwrap()
}

pub fn setpoints(client: &Client) -> Vec<f64> {
    ACTUATORS.iter().map(|a| setpoint(client, a)).collect()
}

/// Polls `f` until it returns true or `timeout` passes.
pub fn eventually(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    f()
}
