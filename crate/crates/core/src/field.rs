use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Values over mesh nodes for a named set of channels, layout `[node][channel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeField {
    pub channels: Vec<String>,
    pub nodes: usize,
    pub values: Vec<f64>,
}

impl NodeField {
    pub fn zeros(channels: Vec<String>, nodes: usize) -> Self {
        let values = vec![0.0; nodes * channels.len()];
        Self {
            channels,
            nodes,
            values,
        }
    }

    pub fn new(channels: Vec<String>, nodes: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.len() == nodes * channels.len(),
            Shape,
            "{} values for {nodes} nodes x {} channels",
            values.len(),
            channels.len()
        );
        ensure!(values.iter().all(|v| v.is_finite()), NonFinite, "field contains non-finite values");
        Ok(Self {
            channels,
            nodes,
            values,
        })
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    /// Node vector of one channel.
    pub fn channel(&self, index: usize) -> Vec<f64> {
        let c = self.channels.len();
        self.values.iter().skip(index).step_by(c).copied().collect()
    }

    pub fn get(&self, node: usize, channel: usize) -> f64 {
        self.values[node * self.channels.len() + channel]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}
