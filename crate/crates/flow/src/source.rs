//! Adapter plugging a trained net into the manifest evaluation harness.

use hazeflow_core::dcp::{dark_channel, estimate_light, estimate_transmission, DcpConfig};
use hazeflow_core::error::Result as CoreResult;
use hazeflow_core::eval::{FieldSource, PreparedField};
use hazeflow_core::manifest::LoadedSample;

use crate::net::ToyFlowNet;

/// Evaluates every sample with one trained net; the transmission input is
/// estimated from the hazy image with the dark channel prior.
pub struct NetFieldSource {
    net: ToyFlowNet,
    dcp: DcpConfig,
}

impl NetFieldSource {
    pub fn new(net: ToyFlowNet) -> Self {
        NetFieldSource {
            net,
            dcp: DcpConfig::default(),
        }
    }

    pub fn with_dcp(net: ToyFlowNet, dcp: DcpConfig) -> Self {
        NetFieldSource { net, dcp }
    }
}

impl FieldSource for NetFieldSource {
    fn prepare<'a>(&'a self, sample: &LoadedSample) -> CoreResult<PreparedField<'a>> {
        let dark = dark_channel(&sample.hazy, self.dcp.patch_radius);
        let light = estimate_light(&sample.hazy, &dark, self.dcp.top_fraction)?;
        let t_in = estimate_transmission(&sample.hazy, &light, &self.dcp)?;
        Ok(PreparedField {
            field: Box::new(&self.net),
            t_in,
        })
    }
}
