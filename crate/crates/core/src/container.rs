//! Chunked binary storage for ensembles and marginal flows.
//!
//! Layout: the magic `GSPC`, a little-endian `u32` version, a `u64` header
//! length, a JSON header, then one chunk of little-endian `f64` per node in
//! the order the header lists them.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpke::{Axis, EmpiricalMeasure, FlowKind, GridDensity, MarginalFlow, Measure};
use crate::martingale::PathEnsemble;

const MAGIC: &[u8; 4] = b"GSPC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum NodeHeader {
    Empirical { len: usize, weighted: bool },
    Grid { axes: Vec<Axis> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "content", rename_all = "lowercase")]
enum Header {
    Ensemble {
        model: String,
        n: usize,
        paths: usize,
        seed: u64,
        steps: usize,
        times: Vec<f64>,
    },
    Flow {
        kind: FlowKind,
        n: usize,
        x0: Vec<f64>,
        mollifier_width: f64,
        times: Vec<f64>,
        nodes: Vec<NodeHeader>,
    },
}

fn write_header<W: Write>(out: &mut W, header: &Header) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    Ok(())
}

fn read_header<R: Read>(input: &mut R) -> Result<Header> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a GSPC container".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Format(format!("container version {version}, expected {VERSION}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    Ok(serde_json::from_slice(&json)?)
}

fn write_f64s<W: Write>(out: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * values.len().min(1 << 16));
    for chunk in values.chunks(1 << 16) {
        buf.clear();
        chunk.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * count];
    input.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunks of eight bytes")))
        .collect())
}

pub fn write_ensemble<W: Write>(mut out: W, ens: &PathEnsemble) -> Result<()> {
    write_header(
        &mut out,
        &Header::Ensemble {
            model: ens.model_name().to_string(),
            n: ens.dim(),
            paths: ens.paths(),
            seed: ens.seed(),
            steps: ens.steps(),
            times: ens.times().to_vec(),
        },
    )?;
    for k in 0..ens.times().len() {
        write_f64s(&mut out, ens.node(k))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ensemble<R: Read>(mut input: R) -> Result<PathEnsemble> {
    match read_header(&mut input)? {
        Header::Ensemble {
            model,
            n,
            paths,
            seed,
            steps,
            times,
        } => {
            let states = read_f64s(&mut input, times.len() * paths * n)?;
            PathEnsemble::from_parts(model, n, paths, seed, steps, times, states)
        }
        Header::Flow { .. } => Err(Error::Format("container holds a flow, not an ensemble".into())),
    }
}

pub fn write_flow<W: Write>(mut out: W, flow: &MarginalFlow) -> Result<()> {
    let nodes = flow
        .nodes()
        .iter()
        .map(|mu| match mu {
            Measure::Empirical(e) => NodeHeader::Empirical {
                len: e.len(),
                weighted: !e.is_uniform(),
            },
            Measure::Grid(g) => NodeHeader::Grid { axes: g.axes().to_vec() },
        })
        .collect();
    write_header(
        &mut out,
        &Header::Flow {
            kind: flow.kind(),
            n: flow.dim(),
            x0: flow.x0().to_vec(),
            mollifier_width: flow.mollifier_width,
            times: flow.times().to_vec(),
            nodes,
        },
    )?;
    for mu in flow.nodes() {
        match mu {
            Measure::Empirical(e) => {
                write_f64s(&mut out, e.points())?;
                if !e.is_uniform() {
                    let w: Vec<f64> = (0..e.len()).map(|i| e.weight(i)).collect();
                    write_f64s(&mut out, &w)?;
                }
            }
            Measure::Grid(g) => write_f64s(&mut out, g.values())?,
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_flow<R: Read>(mut input: R) -> Result<MarginalFlow> {
    match read_header(&mut input)? {
        Header::Flow {
            kind,
            n,
            x0,
            mollifier_width,
            times,
            nodes,
        } => {
            let measures = nodes
                .into_iter()
                .map(|node| match node {
                    NodeHeader::Empirical { len, weighted } => {
                        let points = read_f64s(&mut input, len * n)?;
                        Ok(Measure::Empirical(if weighted {
                            EmpiricalMeasure::weighted(n, points, read_f64s(&mut input, len)?)?
                        } else {
                            EmpiricalMeasure::uniform(n, points)?
                        }))
                    }
                    NodeHeader::Grid { axes } => {
                        let cells = axes.iter().map(|a| a.cells).product();
                        let values = read_f64s(&mut input, cells)?;
                        Ok(Measure::Grid(GridDensity::new(axes, values)?))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let mut flow = MarginalFlow::new(kind, x0, times, measures)?;
            flow.mollifier_width = mollifier_width;
            Ok(flow)
        }
        Header::Ensemble { .. } => Err(Error::Format("container holds an ensemble, not a flow".into())),
    }
}
