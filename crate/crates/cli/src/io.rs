use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sbs_core::{build_mdp, optimal_policy, DistortionModel, DistortionSpec, Mdp, MdpSpec, Policy};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::OutputArgs;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn load_mdp(path: &Path) -> Result<Mdp> {
    let spec: MdpSpec = read_json(path)?;
    build_mdp(&spec).with_context(|| format!("invalid MDP in {}", path.display()))
}

pub fn load_distortion(path: &Path) -> Result<DistortionModel> {
    let spec: DistortionSpec = read_json(path)?;
    spec.build().with_context(|| format!("invalid distortion in {}", path.display()))
}

/// Policy files list deterministic actions, a probability table, or one
/// action per state applied at every step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyFile {
    Actions { actions: Vec<Vec<usize>> },
    Table { table: Vec<Vec<Vec<f64>>> },
    Stationary { stationary: Vec<usize> },
}

/// `optimal`, `uniform`, or a path to a [`PolicyFile`].
pub fn load_policy(choice: &str, mdp: &Mdp) -> Result<Policy> {
    let policy = match choice {
        "optimal" => optimal_policy(mdp),
        "uniform" => Policy::uniform(mdp.n_states(), mdp.n_actions(), mdp.horizon()),
        path => match read_json::<PolicyFile>(Path::new(path))? {
            PolicyFile::Actions { actions } => Policy::from_actions(&actions, mdp.n_actions())?,
            PolicyFile::Table { table } => Policy::from_table(&table)?,
            PolicyFile::Stationary { stationary } => Policy::stationary(&stationary, mdp.n_actions(), mdp.horizon())?,
        },
    };
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() || policy.horizon() != mdp.horizon() {
        anyhow::bail!("policy dimensions do not match the MDP");
    }
    Ok(policy)
}

pub fn emit<T: Serialize>(value: &T, out: &OutputArgs) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match &out.out {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
