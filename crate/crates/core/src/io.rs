//! JSON files for repertoires and trained networks.
//!
//! Floats are written in shortest round-trip form, so save, load, save
//! reproduces the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Behavior, EnvConfig};
use crate::error::{Error, Result};
use crate::repertoire::{Repertoire, Skill};
use crate::surrogate::{Normalizer, Surrogate, SurrogateNet};

pub const REPERTOIRE_FORMAT: &str = "mqd-repertoire";
pub const NET_FORMAT: &str = "mqd-net";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkillRecord {
    genes: Vec<f64>,
    behavior: [f64; 2],
    quality: f64,
    novelty: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RepertoireFile {
    format: String,
    version: u32,
    k: usize,
    t_dist: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    env: Option<EnvConfig>,
    skills: Vec<SkillRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetFile {
    format: String,
    version: u32,
    inputs: usize,
    hidden: usize,
    outputs: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    normalizer: Normalizer,
}

fn check_header(format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Format(format!("expected a '{expected}' file, found '{format}'")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported {expected} version {version}")));
    }
    Ok(())
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    // serde_json reports "... at line L column C"
    serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

fn render<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// Serializes a repertoire, optionally recording the environment it was
/// built in.
pub fn repertoire_to_json(rep: &Repertoire, env: Option<&EnvConfig>) -> String {
    render(&RepertoireFile {
        format: REPERTOIRE_FORMAT.into(),
        version: FORMAT_VERSION,
        k: rep.k(),
        t_dist: rep.t_dist(),
        env: env.cloned(),
        skills: rep
            .iter()
            .map(|s| SkillRecord {
                genes: s.action.0.clone(),
                behavior: s.behavior.0,
                quality: s.quality,
                novelty: s.novelty,
            })
            .collect(),
    })
}

/// Inverse of [`repertoire_to_json`]. Skill order and novelty caches are
/// kept as stored.
pub fn repertoire_from_json(text: &str) -> Result<(Repertoire, Option<EnvConfig>)> {
    let file: RepertoireFile = parse(text)?;
    check_header(&file.format, file.version, REPERTOIRE_FORMAT)?;
    let mut rep = Repertoire::new(file.k, file.t_dist)?;
    let dim = file.skills.first().map_or(0, |s| s.genes.len());
    for (i, r) in file.skills.into_iter().enumerate() {
        if r.genes.len() != dim {
            return Err(Error::Format(format!("skill {i} has {} genes, expected {dim}", r.genes.len())));
        }
        let mut skill = Skill::new(Action(r.genes), Behavior(r.behavior), r.quality);
        skill.novelty = r.novelty;
        rep.push_unchecked(skill);
    }
    Ok((rep, file.env))
}

pub fn surrogate_to_json(model: &Surrogate) -> String {
    let net = &model.net;
    render(&NetFile {
        format: NET_FORMAT.into(),
        version: FORMAT_VERSION,
        inputs: net.inputs(),
        hidden: net.hidden_units(),
        outputs: net.outputs(),
        w1: net.w1().to_vec(),
        b1: net.b1().to_vec(),
        w2: net.w2().to_vec(),
        b2: net.b2().to_vec(),
        normalizer: model.norm.clone(),
    })
}

/// Loads a network; the stored architecture must agree with the weights.
/// The optimizer state starts fresh.
pub fn surrogate_from_json(text: &str) -> Result<Surrogate> {
    let file: NetFile = parse(text)?;
    check_header(&file.format, file.version, NET_FORMAT)?;
    let net = SurrogateNet::from_parts(file.w1, file.b1, file.w2, file.b2, file.inputs)?;
    if net.hidden_units() != file.hidden || net.outputs() != file.outputs {
        return Err(Error::Format(format!(
            "architecture {}x{}x{} does not match the weights ({}x{}x{})",
            file.inputs,
            file.hidden,
            file.outputs,
            net.inputs(),
            net.hidden_units(),
            net.outputs()
        )));
    }
    Ok(Surrogate::from_net(net, file.normalizer))
}

/// Writes `contents` next to `path` and renames it into place, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}
