//! End-to-end secure inference: the model owner shares the weights, the
//! client shares its inputs, and the logits are opened to every party.

use lthmpc_core::infer::{FusionPlan, NetworkSpec};
use lthmpc_core::net::{Network, PartyId};
use lthmpc_core::party::Party;
use lthmpc_core::{Error, Result};

pub const MODEL_OWNER: PartyId = 0;
pub const CLIENT: PartyId = 1;

/// What one party brings to an inference.
#[derive(Clone, Copy, Debug)]
pub struct Inputs<'a> {
    /// The full network at the model owner, the architecture elsewhere.
    pub spec: &'a NetworkSpec,
    /// Sample-major inputs, present only at the client.
    pub input: Option<&'a [u64]>,
    pub batch: usize,
    pub fused: bool,
}

/// Party `id`'s share of the knowledge when one caller holds the full
/// network and the inputs.
pub fn view<'a>(id: PartyId, spec: &NetworkSpec, input: &'a [u64]) -> (NetworkSpec, Option<&'a [u64]>) {
    let spec = if id == MODEL_OWNER { spec.clone() } else { spec.architecture() };
    (spec, (id == CLIENT).then_some(input))
}

/// Runs one inference at party `p` and returns the opened logits.
pub fn infer<N: Network>(p: &mut Party<N>, inp: &Inputs<'_>) -> Result<Vec<u64>> {
    let n = inp.batch * inp.spec.input.len();
    if p.id() == CLIENT && inp.input.is_none_or(|x| x.len() != n) {
        return Err(Error::dim(format!("client input must hold {n} elements")));
    }
    let model = p.share_model(inp.spec, MODEL_OWNER)?;
    let x = p.share_input(CLIENT, inp.input.filter(|_| p.id() == CLIENT), n)?;
    let plan = if inp.fused { FusionPlan::fused(&model.spec) } else { FusionPlan::unfused(&model.spec) };
    let y = p.secure_infer(&model, &plan, &x, inp.batch)?;
    p.reveal(&y)
}
