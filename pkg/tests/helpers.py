import math

from nlipol.fitting import fit_fringe
from nlipol.interference import ArmGeometry, InterferometerConfig
from nlipol.jones import SampleSpec
from nlipol.scan import ScanPlan, balance_search, synthesize_scan


def theta_fits(delta_single, tau_m_sq=1.0, axis="idler_mirror", arm="idler", thetas_deg=(0, 15, 30, 45, 60, 75, 90),
               noise="none", seed=0, config=None, group_delay=0.0):
    """Fits of balanced scans over a set of sample orientations."""
    config = config or InterferometerConfig()
    sample = SampleSpec.from_transmission(delta_single, tau_m_sq, group_delay=group_delay)
    geometry = ArmGeometry(dz_s=balance_search(config, sample, sample_arm=arm)) if group_delay else ArmGeometry()
    fits = []
    for j, deg in enumerate(thetas_deg):
        plan = ScanPlan.around(axis, config, seed=seed + j, noise=noise)
        scan = synthesize_scan(plan, geometry, config, sample.rotated(math.radians(deg)), arm)
        fits.append(fit_fringe(scan))
    return fits
