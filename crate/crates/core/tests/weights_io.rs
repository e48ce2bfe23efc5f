//! Manifest + payload loading as seen by an external exporter.

mod common;

use common::*;
use rfscope::cli::toy_network;
use rfscope::nn::{vgg19_plan, Architecture, LayerPlan, NetworkSpec};
use rfscope::weights::{self, sha256_hex};
use rfscope::{Error, WeightsError};

fn one_conv_plan() -> Vec<LayerPlan> {
    vec![
        LayerPlan::Conv {
            name: "conv1_1".into(),
            in_channels: 3,
            out_channels: 2,
        },
        LayerPlan::Relu("relu1_1".into()),
        LayerPlan::Pool("pool1".into()),
    ]
}

#[test]
fn shipped_fixture_is_the_seeded_toy_network() {
    let net = weights::load(&fixture("toy.manifest"), &fixture("toy.bin")).unwrap();
    assert_eq!(net, toy_network(0).unwrap());
}

#[test]
fn hand_written_manifest_loads() {
    // What an exporter writes: weights as [out][in][ky][kx] f32le, then bias.
    let dir = tempfile::tempdir().unwrap();
    let weights: Vec<f32> = (0..2 * 3 * 9).map(|i| i as f32 * 0.01 - 0.2).collect();
    let bias = [0.5f32, -0.25];
    let mut payload = Vec::new();
    for v in weights.iter().chain(&bias) {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let manifest = format!(
        r#"format_version = 1
architecture = "custom"
payload_sha256 = "{}"
layers = ["conv1_1", "relu1_1", "pool1"]

[[entries]]
layer_name = "conv1_1"
kind = "bias"
shape = [2]
dtype = "f32le"
byte_offset = 216
byte_length = 8

[[entries]]
layer_name = "conv1_1"
kind = "weight"
shape = [2, 3, 3, 3]
dtype = "f32le"
byte_offset = 0
byte_length = 216
"#,
        sha256_hex(&payload)
    );
    let mpath = dir.path().join("net.manifest");
    std::fs::write(&mpath, manifest).unwrap();
    std::fs::write(dir.path().join("net.bin"), &payload).unwrap();

    let net = weights::load(&mpath, &weights::payload_path_for(&mpath)).unwrap();
    let conv = net.convs().next().unwrap();
    assert_eq!(conv.bias, bias);
    assert_eq!(conv.weights, weights);
    assert_eq!(conv.weight(1, 2, 0, 1), weights[(3 + 2) * 9 + 1]);
    assert_eq!(net.checkpoints().count(), 1);
}

#[test]
fn save_then_load_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = (dir.path().join("a.manifest"), dir.path().join("a.bin"));
    for net in [
        NetworkSpec::random(Architecture::Custom, &one_conv_plan(), 3).unwrap(),
        NetworkSpec::random(Architecture::Vgg19Encoder, &vgg19_plan(), 3).unwrap(),
    ] {
        weights::save(&net, &m, &p).unwrap();
        assert_eq!(weights::load(&m, &p).unwrap(), net);
    }
}

#[test]
fn truncated_payloads_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let net = toy_network(1).unwrap();
    let (manifest, payload) = weights::encode(&net).unwrap();
    let mpath = dir.path().join("t.manifest");
    let ppath = dir.path().join("t.bin");
    let mut r = rng(99);
    for cut in [0usize, 1, 4, 431, 432, 1039] {
        let short = &payload[..cut];
        // checksum matching the truncated bytes, so bounds checks are reached
        let mut m = manifest.clone();
        m.payload_sha256 = sha256_hex(short);
        std::fs::write(&mpath, toml::to_string(&m).unwrap()).unwrap();
        std::fs::write(&ppath, short).unwrap();
        match weights::load(&mpath, &ppath) {
            Err(Error::Weights(WeightsError::Malformed { .. })) => {}
            other => panic!("cut {cut}: {other:?}"),
        }
        // stale checksum
        std::fs::write(&mpath, toml::to_string(&manifest).unwrap()).unwrap();
        let err = weights::load(&mpath, &ppath).unwrap_err();
        assert!(err.to_string().contains("E_CHECKSUM"), "{err}");
    }
    // random byte flips are always caught
    for _ in 0..10 {
        let mut bad = payload.clone();
        let i = rand::Rng::gen_range(&mut r, 0..bad.len());
        bad[i] ^= 0x40;
        std::fs::write(&ppath, &bad).unwrap();
        let err = weights::load(&mpath, &ppath).unwrap_err();
        assert!(err.to_string().contains("E_CHECKSUM"));
    }
}

#[test]
fn garbage_manifest_text_is_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let mpath = dir.path().join("g.manifest");
    let ppath = dir.path().join("g.bin");
    std::fs::write(&ppath, b"").unwrap();
    for text in ["", "not toml [[", "format_version = 1\n", "format_version = \"one\"\n"] {
        std::fs::write(&mpath, text).unwrap();
        let err = weights::load(&mpath, &ppath).unwrap_err();
        assert!(matches!(err, Error::Weights(_)), "{text:?}: {err}");
    }
    std::fs::write(&mpath, "format_version = 7\narchitecture = \"custom\"\n").unwrap();
    assert!(weights::load(&mpath, &ppath).unwrap_err().to_string().contains("E_VERSION"));
}

#[test]
fn vgg_manifest_without_a_layer_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let net = NetworkSpec::random(Architecture::Vgg19Encoder, &vgg19_plan(), 0).unwrap();
    let (mut manifest, payload) = weights::encode(&net).unwrap();
    manifest.entries.retain(|e| e.layer_name != "conv3_2");
    let mpath = dir.path().join("v.manifest");
    let ppath = dir.path().join("v.bin");
    std::fs::write(&mpath, toml::to_string(&manifest).unwrap()).unwrap();
    std::fs::write(&ppath, &payload).unwrap();
    let msg = weights::load(&mpath, &ppath).unwrap_err().to_string();
    assert!(msg.contains("E_MISSING") && msg.contains("conv3_2"), "{msg}");
}
