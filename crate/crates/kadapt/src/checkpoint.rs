//! Versioned textual model checkpoints.
//!
//! Layout: a format line, the architecture, one block per learnable tensor
//! (sorted by layer and role), then one block per running-statistics layer.
//! Floats are written in Rust's shortest round-trip decimal form, so
//! save -> load -> save is byte-identical and loaded parameters are
//! bit-equal to the saved ones.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use kadapt_core::model::{
    ArchitectureConfig, LayerSpec, ModelParams, ParamKey, ParamRole, RunningNorm,
};
use kadapt_core::tensor::Tensor;

use crate::error::{HarnessError, Result};

const FORMAT_LINE: &str = "kadapt-checkpoint v1";

fn role_token(role: ParamRole) -> &'static str {
    match role {
        ParamRole::ConvWeight => "conv_weight",
        ParamRole::BnGamma => "bn_gamma",
        ParamRole::BnBeta => "bn_beta",
        ParamRole::DenseWeight => "dense_weight",
        ParamRole::DenseBias => "dense_bias",
    }
}

fn parse_role(token: &str) -> Option<ParamRole> {
    Some(match token {
        "conv_weight" => ParamRole::ConvWeight,
        "bn_gamma" => ParamRole::BnGamma,
        "bn_beta" => ParamRole::BnBeta,
        "dense_weight" => ParamRole::DenseWeight,
        "dense_bias" => ParamRole::DenseBias,
        _ => return None,
    })
}

fn layer_token(layer: &LayerSpec) -> String {
    match layer {
        LayerSpec::Conv { out_channels, kernel, stride, padding, batchnorm } => format!(
            "conv:{out_channels}:{kernel}:{stride}:{padding}:{}",
            if *batchnorm { "bn" } else { "nobn" }
        ),
        LayerSpec::Pool { window, stride } => format!("pool:{window}:{stride}"),
        LayerSpec::Dense { width } => format!("dense:{width}"),
    }
}

fn parse_layer(token: &str) -> Option<LayerSpec> {
    let parts: Vec<&str> = token.split(':').collect();
    match parts.as_slice() {
        ["conv", o, k, s, p, bn] => Some(LayerSpec::Conv {
            out_channels: o.parse().ok()?,
            kernel: k.parse().ok()?,
            stride: s.parse().ok()?,
            padding: p.parse().ok()?,
            batchnorm: match *bn {
                "bn" => true,
                "nobn" => false,
                _ => return None,
            },
        }),
        ["pool", w, s] => {
            Some(LayerSpec::Pool { window: w.parse().ok()?, stride: s.parse().ok()? })
        }
        ["dense", w] => Some(LayerSpec::Dense { width: w.parse().ok()? }),
        _ => None,
    }
}

fn floats_line(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 8);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{v}"));
    }
    out
}

fn parse_floats(line: &str, what: &str) -> Result<Vec<f64>> {
    line.split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| {
                HarnessError::validation(format!("checkpoint: bad float '{t}' in {what}"))
            })
        })
        .collect()
}

/// Serialize model parameters.
pub fn render(params: &ModelParams) -> String {
    let arch = params.arch();
    let mut out = String::new();
    out.push_str(FORMAT_LINE);
    out.push('\n');
    out.push_str(&format!("input_side: {}\n", arch.input_side));
    out.push_str(&format!("input_channels: {}\n", arch.input_channels));
    out.push_str(&format!("class_count: {}\n", arch.class_count));
    let layer_tokens: Vec<String> = arch.layers.iter().map(layer_token).collect();
    out.push_str(&format!("layers: {}\n", layer_tokens.join("|")));
    for (key, tensor) in params.tensors() {
        out.push_str(&format!("tensor: {} {}\n", key.layer, role_token(key.role)));
        let shape: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        out.push_str(&format!("shape: {}\n", shape.join(" ")));
        out.push_str(&floats_line(tensor.data()));
        out.push('\n');
    }
    for (layer, r) in params.running() {
        out.push_str(&format!("running: {layer}\n"));
        out.push_str(&floats_line(&r.mean));
        out.push('\n');
        out.push_str(&floats_line(&r.var));
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, render(params))?;
    Ok(())
}

/// Parse a checkpoint back into validated model parameters.
pub fn parse(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines();
    let bad = |msg: &str| HarnessError::validation(format!("checkpoint: {msg}"));
    if lines.next() != Some(FORMAT_LINE) {
        return Err(bad(&format!("missing format line '{FORMAT_LINE}'")));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        line.strip_prefix(&format!("{name}: "))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected '{name}:' line, got '{line}'")))
    };
    let input_side: usize =
        field("input_side")?.parse().map_err(|_| bad("bad input_side"))?;
    let input_channels: usize =
        field("input_channels")?.parse().map_err(|_| bad("bad input_channels"))?;
    let class_count: usize =
        field("class_count")?.parse().map_err(|_| bad("bad class_count"))?;
    let layers_line = field("layers")?;
    let layers: Option<Vec<LayerSpec>> = layers_line.split('|').map(parse_layer).collect();
    let layers = layers.ok_or_else(|| bad(&format!("bad layer list '{layers_line}'")))?;
    let arch = ArchitectureConfig { input_side, input_channels, class_count, layers };

    let mut tensors: BTreeMap<ParamKey, Tensor> = BTreeMap::new();
    let mut running: BTreeMap<usize, RunningNorm> = BTreeMap::new();
    loop {
        let line = lines.next().ok_or_else(|| bad("missing 'end' line"))?;
        if line == "end" {
            break;
        }
        if let Some(rest) = line.strip_prefix("tensor: ") {
            let mut parts = rest.split(' ');
            let layer: usize = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad tensor layer index"))?;
            let role = parts
                .next()
                .and_then(parse_role)
                .ok_or_else(|| bad("bad tensor role"))?;
            let shape_line = lines.next().ok_or_else(|| bad("missing shape line"))?;
            let shape: Option<Vec<usize>> = shape_line
                .strip_prefix("shape: ")
                .ok_or_else(|| bad("missing shape prefix"))?
                .split(' ')
                .map(|t| t.parse().ok())
                .collect();
            let shape = shape.ok_or_else(|| bad("bad shape"))?;
            let data = parse_floats(lines.next().ok_or_else(|| bad("missing data line"))?, "tensor")?;
            let tensor = Tensor::new(shape, data)
                .map_err(|e| bad(&format!("tensor {layer}/{}: {e}", role_token(role))))?;
            tensors.insert(ParamKey { layer, role }, tensor);
        } else if let Some(rest) = line.strip_prefix("running: ") {
            let layer: usize = rest.parse().map_err(|_| bad("bad running layer index"))?;
            let mean =
                parse_floats(lines.next().ok_or_else(|| bad("missing running mean"))?, "running mean")?;
            let var =
                parse_floats(lines.next().ok_or_else(|| bad("missing running var"))?, "running var")?;
            running.insert(layer, RunningNorm { mean, var });
        } else {
            return Err(bad(&format!("unexpected line '{line}'")));
        }
    }
    Ok(ModelParams::from_parts(arch, tensors, running)?)
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| {
        HarnessError::validation(format!("cannot read checkpoint {}: {e}", path.display()))
    })?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kadapt_core::model::build_model;

    #[test]
    fn round_trip_is_bit_exact_and_byte_stable() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 77).unwrap();
        let text = render(&params);
        let loaded = parse(&text).unwrap();
        for (key, t) in params.tensors() {
            let u = &loaded.tensors()[key];
            let bits_a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = u.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{key:?}");
        }
        assert_eq!(render(&loaded), text, "save -> load -> save must be byte identical");
    }

    #[test]
    fn outputs_match_after_reload() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 78).unwrap();
        let loaded = parse(&render(&params)).unwrap();
        let mut rng = kadapt_core::rng::Rng::seed(4);
        let batch = Tensor::from_fn(vec![2, 1, 8, 8], |_| rng.uniform(0.0, 1.0));
        let a = kadapt_core::model::forward_logits(&params, &batch, kadapt_core::model::Mode::Eval)
            .unwrap();
        let b = kadapt_core::model::forward_logits(&loaded, &batch, kadapt_core::model::Mode::Eval)
            .unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 79).unwrap();
        let text = render(&params);
        assert!(parse(&text.replace("kadapt-checkpoint v1", "other v9")).is_err());
        assert!(parse(text.strip_suffix("end\n").unwrap()).is_err());
        // tamper with a shape
        let tampered = text.replace("shape: 4 1 3 3", "shape: 4 1 5 5");
        assert!(parse(&tampered).is_err());
    }
}
