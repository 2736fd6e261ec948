//! Named architecture cells for the ablation, robustness and latency runs.
//! Every cell is the base configuration with a few fields overwritten.

use trisim::config::{FaVariant, FusionMode};
use trisim::encoder::BlockSelection;
use trisim::{Error, RunConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub name: String,
    pub config: RunConfig,
}

pub const GRIDS: [&str; 4] = ["main", "fa-only", "rfm-arch", "all"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    Pooling,
    Rfm,
    /// Every dilation rate set to 1.
    Inception,
    /// Every ψ kernel as large as φ.
    Dilated,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Pooling => "pooling",
            Fusion::Rfm => "rfm",
            Fusion::Inception => "inception",
            Fusion::Dilated => "dilated",
        }
    }
}

fn attention_name(sa: bool, fa: FaVariant) -> String {
    match (sa, fa) {
        (true, FaVariant::None) => "sa".into(),
        (true, fa) => format!("sa+{}", fa.name()),
        (false, FaVariant::None) => "proj".into(),
        (false, fa) => fa.name().into(),
    }
}

pub fn cell(base: &RunConfig, fusion: Fusion, sa: bool, fa: FaVariant) -> Cell {
    let mut c = base.clone();
    c.attention.sa = sa;
    c.attention.fa = fa;
    c.fusion.mode = match fusion {
        Fusion::Pooling => FusionMode::Pooling,
        _ => FusionMode::Rfm,
    };
    match fusion {
        Fusion::Inception => c.fusion.dilations = vec![1; c.fusion.k],
        Fusion::Dilated => c.fusion.psi_sizes = vec![c.fusion.phi_size; c.fusion.k],
        _ => {}
    }
    Cell {
        name: format!("{}:{}", fusion.name(), attention_name(sa, fa)),
        config: c,
    }
}

const FA_ALL: [FaVariant; 4] = [
    FaVariant::None,
    FaVariant::Fa1,
    FaVariant::Fa2,
    FaVariant::Fa3,
];

/// {pooling, rfm} × {SA, SA+FA-1, SA+FA-2, SA+FA-3}.
pub fn main_grid(base: &RunConfig) -> Vec<Cell> {
    [Fusion::Pooling, Fusion::Rfm]
        .into_iter()
        .flat_map(|f| FA_ALL.map(|fa| cell(base, f, true, fa)))
        .collect()
}

/// Standalone FA-1/2/3 without spatial attention, under the base fusion.
pub fn fa_only_grid(base: &RunConfig) -> Vec<Cell> {
    let fusion = match base.fusion.mode {
        FusionMode::Pooling => Fusion::Pooling,
        FusionMode::Rfm => Fusion::Rfm,
    };
    FA_ALL[1..]
        .iter()
        .map(|&fa| cell(base, fusion, false, fa))
        .collect()
}

/// {pooling, inception-only, dilated-only, rfm} under the base attention.
pub fn rfm_grid(base: &RunConfig) -> Vec<Cell> {
    let a = &base.attention;
    [
        Fusion::Pooling,
        Fusion::Inception,
        Fusion::Dilated,
        Fusion::Rfm,
    ]
    .into_iter()
    .map(|f| cell(base, f, a.sa, a.fa))
    .collect()
}

pub const STRATEGIES: [BlockSelection; 4] = [
    BlockSelection::SpacedHalf,
    BlockSelection::BottomHalf,
    BlockSelection::TopHalf,
    BlockSelection::All,
];

/// Four block strategies, each with learned (`afe`) and constant (`fe`)
/// gates.
pub fn robust_grid(base: &RunConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for s in STRATEGIES {
        for adaptive in [true, false] {
            let mut c = base.clone();
            c.blocks.strategy = s.clone();
            c.blocks.adaptive = adaptive;
            cells.push(Cell {
                name: format!("{}:{}", s.name(), if adaptive { "afe" } else { "fe" }),
                config: c,
            });
        }
    }
    cells
}

/// Resolves a comma-separated list of grid names and cell names.
pub fn resolve(spec: &str, base: &RunConfig) -> Result<Vec<Cell>, Error> {
    let known: Vec<Cell> = main_grid(base)
        .into_iter()
        .chain(fa_only_grid(base))
        .chain(rfm_grid(base))
        .collect();
    let mut out: Vec<Cell> = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let cells = match item {
            "main" => main_grid(base),
            "fa-only" => fa_only_grid(base),
            "rfm-arch" => rfm_grid(base),
            "all" => known.clone(),
            name => match known.iter().find(|c| c.name == name) {
                Some(c) => vec![c.clone()],
                None => {
                    return Err(Error::Argument(format!(
                        "unknown grid or cell `{name}`; grids are {}, cells are {}",
                        GRIDS.join(", "),
                        known
                            .iter()
                            .map(|c| c.name.as_str())
                            .collect::<Vec<_>>()
                            .join(", ")
                    )))
                }
            },
        };
        for c in cells {
            if !out.iter().any(|o| o.name == c.name) {
                out.push(c);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Argument("empty grid".into()));
    }
    Ok(out)
}
