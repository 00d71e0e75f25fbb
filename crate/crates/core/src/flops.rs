//! MAC accounting. One FLOP is one multiply-accumulate; BN, activations and
//! pooling are not counted.

use crate::{ArchSpec, Result, SubnetConfig};

/// Exact multiply-accumulate count of one forward pass for a single image.
pub fn count_macs(cfg: &SubnetConfig, arch: &ArchSpec) -> Result<u64> {
    cfg.validate(arch)?;
    let (sh, sw) = arch.stem_out_hw();
    let k = arch.stem_kernel as u64;
    let mut macs = (arch.stem_channels * arch.in_channels) as u64 * k * k * (sh * sw) as u64;
    for slot in arch.layers() {
        if !cfg.is_active(arch, slot.index) {
            continue;
        }
        let cin = slot.in_channels as u64;
        let cout = slot.out_channels as u64;
        let hidden = cfg.width[slot.index] as u64 * cin;
        let k = cfg.kernel[slot.index] as u64;
        let in_px = (slot.in_hw.0 * slot.in_hw.1) as u64;
        let (oh, ow) = slot.out_hw();
        let out_px = (oh * ow) as u64;
        macs += hidden * cin * in_px;
        macs += hidden * k * k * out_px;
        macs += cout * hidden * out_px;
    }
    macs += (arch.num_classes * arch.last_channels()) as u64;
    Ok(macs)
}

pub fn mflops(macs: u64) -> f64 {
    macs as f64 / 1e6
}

pub fn subnet_mflops(cfg: &SubnetConfig, arch: &ArchSpec) -> Result<f64> {
    count_macs(cfg, arch).map(mflops)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_extremes_span_the_bins() {
        for arch in [ArchSpec::grayscale28(), ArchSpec::cifar(10), ArchSpec::cifar(100)] {
            let max = subnet_mflops(&SubnetConfig::all_max(&arch), &arch).unwrap();
            let min = subnet_mflops(&SubnetConfig::all_min(&arch), &arch).unwrap();
            assert!((13.5..=15.0).contains(&max), "max {max}");
            assert!((3.5..=4.5).contains(&min), "min {min}");
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let arch = ArchSpec::cifar(10);
        let mut cfg = SubnetConfig::all_min(&arch);
        cfg.width[0] = 5;
        assert!(count_macs(&cfg, &arch).is_err());
    }
}
