//! `key = value` run configuration with `[model]`, `[train]` and `[data]`
//! sections. Unknown sections or keys are errors.

use std::str::FromStr;

use egat_tensor::Precision;
use ini::Ini;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::graph_build::{Connectivity, GraphConfig};
use crate::model::ModelConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub graph: GraphConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Copies the graph sizes the model depends on and checks everything.
    pub fn finish(mut self) -> Result<Self> {
        self.model.d_n = self.graph.d_n;
        self.model.d_e = self.graph.d_e;
        self.model.validate()?;
        self.graph.validate()?;
        self.train.validate()?;
        Ok(self)
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse '{value}'")))
}

fn flag(section: &str, key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("[{section}] {key}: expected a boolean, got '{value}'"))),
    }
}

fn set_model(m: &mut ModelConfig, key: &str, v: &str) -> Result<()> {
    let s = "model";
    match key {
        "q_layers" => m.q_layers = parse(s, key, v)?,
        "hidden" => m.hidden = parse(s, key, v)?,
        "node_classes" => m.node_classes = parse(s, key, v)?,
        "edge_classes" => m.edge_classes = parse(s, key, v)?,
        "dropout" => m.dropout = parse(s, key, v)?,
        "aux" => m.aux = flag(s, key, v)?,
        "concat" => m.concat = flag(s, key, v)?,
        "residual" => m.residual = flag(s, key, v)?,
        "leaky_attention" => m.leaky_attention = flag(s, key, v)?,
        "attention_slope" => m.attention_slope = parse(s, key, v)?,
        "embed_channels" => {
            m.embed_channels = v
                .split(',')
                .map(|c| parse(s, key, c))
                .collect::<Result<_>>()?
        }
        "embed_kernel" => m.embed_kernel = parse(s, key, v)?,
        "edge_hidden" => m.edge_hidden = parse(s, key, v)?,
        "readout_hidden" => m.readout_hidden = parse(s, key, v)?,
        _ => return Err(Error::Config(format!("unknown key [model] {key}"))),
    }
    Ok(())
}

fn set_train(t: &mut TrainConfig, m: &mut ModelConfig, g: &mut GraphConfig, key: &str, v: &str) -> Result<()> {
    let s = "train";
    match key {
        "lr" => t.lr = parse(s, key, v)?,
        "batch_size" => t.batch_size = parse(s, key, v)?,
        "lambda1" => t.lambda1 = parse(s, key, v)?,
        "lambda2" => t.lambda2 = parse(s, key, v)?,
        "gamma" => t.gamma = parse(s, key, v)?,
        "max_epochs" => t.max_epochs = parse(s, key, v)?,
        "patience" => t.patience = parse(s, key, v)?,
        "decay" => t.decay = parse(s, key, v)?,
        "early_stop" => t.early_stop = parse(s, key, v)?,
        "seed" => t.seed = parse(s, key, v)?,
        "precision" => {
            t.precision = match v.trim() {
                "f32" => Precision::F32,
                "f64" => Precision::F64,
                _ => return Err(Error::Config(format!("[train] precision: expected f32 or f64, got '{v}'"))),
            }
        }
        // also listed with the training hyperparameters
        "dropout" => m.dropout = parse(s, key, v)?,
        "n_max" => g.n_max = parse(s, key, v)?,
        _ => return Err(Error::Config(format!("unknown key [train] {key}"))),
    }
    Ok(())
}

fn set_data(g: &mut GraphConfig, key: &str, v: &str) -> Result<()> {
    let s = "data";
    match key {
        "d_n" => g.d_n = parse(s, key, v)?,
        "d_e" => g.d_e = parse(s, key, v)?,
        "n_max" => g.n_max = parse(s, key, v)?,
        "global" => g.global = flag(s, key, v)?,
        "connectivity" => {
            g.connectivity = match v.trim() {
                "los" => Connectivity::Los,
                "los_t" => Connectivity::LosTemporal,
                "full" => Connectivity::Full,
                _ => return Err(Error::Config(format!("[data] connectivity: expected los, los_t or full, got '{v}'"))),
            }
        }
        _ => return Err(Error::Config(format!("unknown key [data] {key}"))),
    }
    Ok(())
}

/// Parses a config file body on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut cfg = RunConfig::default();
    for (section, props) in ini.iter() {
        for (key, value) in props.iter() {
            match section {
                Some("model") => set_model(&mut cfg.model, key, value)?,
                Some("train") => set_train(&mut cfg.train, &mut cfg.model, &mut cfg.graph, key, value)?,
                Some("data") => set_data(&mut cfg.graph, key, value)?,
                Some(other) => return Err(Error::Config(format!("unknown section [{other}]"))),
                None => return Err(Error::Config(format!("key '{key}' outside any section"))),
            }
        }
        if let Some(other) = section.filter(|s| !["model", "train", "data"].contains(s)) {
            return Err(Error::Config(format!("unknown section [{other}]")));
        }
    }
    cfg.finish()
}
