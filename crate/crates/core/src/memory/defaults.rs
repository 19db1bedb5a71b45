use std::collections::BTreeMap;

use serde::Deserialize;

use super::{EdgePrior, GlobalId, GlobalNode, LocalNode, MemoryBank};

const DEFAULT_PRIORS: &str = include_str!("../../assets/default_priors.json");

#[derive(Deserialize)]
struct PriorAsset {
    globals: Vec<GlobalNode>,
    locals: Vec<LocalNode>,
    seeded_edges: Vec<SeededEdge>,
}

#[derive(Deserialize)]
struct SeededEdge {
    src: GlobalId,
    dst: GlobalId,
    prior: EdgePrior,
}

/// The shipped bank: five global intents, their local strategy cards and
/// all 25 directed edges with empty statistics. With `seed_priors`, common
/// transitions carry specific rationale text instead of the generic prior.
pub fn default_bank(seed_priors: bool) -> MemoryBank {
    let asset: PriorAsset = serde_json::from_str(DEFAULT_PRIORS).expect("embedded priors parse");
    let edge_priors: BTreeMap<(GlobalId, GlobalId), EdgePrior> = if seed_priors {
        asset
            .seeded_edges
            .into_iter()
            .map(|e| ((e.src, e.dst), e.prior))
            .collect()
    } else {
        BTreeMap::new()
    };
    let origin = if seed_priors { "htam_graph_initial+seeded_priors" } else { "htam_graph_initial" };
    MemoryBank::assemble(asset.globals, asset.locals, &edge_priors, origin).expect("embedded priors are valid")
}

/// Default bank with generic edge priors.
pub fn init_default_bank() -> MemoryBank {
    default_bank(false)
}
