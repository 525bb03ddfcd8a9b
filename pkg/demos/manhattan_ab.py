"""Does the Manhattan world help? One seed, with and without its terms.

The same noisy dataset is run twice: once with Manhattan-frame and
structural-line residuals, once with points, lines and odometry only.
Pass a seed as the first argument to try another scene.
"""
import sys

from mwvio.pipeline.evaluate import ate_rmse
from mwvio.pipeline.run import RunConfig, run_vio
from mwvio.pipeline.sim import SimConfig, simulate_scene

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
d = simulate_scene(SimConfig(seed=seed, odom_rot_deg=0.3, odom_trans=0.001))
gt = d.gt_trajectory()
ate = {}
for on in (True, False):
    traj, _ = run_vio(d, RunConfig(use_manhattan=on, use_struct_lines=on, sigma_odom_trans=0.001))
    ate[on] = ate_rmse(traj, gt)
    print(f"{'with' if on else 'without'} Manhattan terms: ATE {ate[on]:.4f} m")
print(f"improvement {1 - ate[True] / ate[False]:.0%}")
