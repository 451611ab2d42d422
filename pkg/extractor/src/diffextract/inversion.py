"""Few-step deterministic latent inversion.

The encoded image latent is pushed up the noise schedule with the usual
noise-free inversion recursion: at every step the model's noise estimate at
the current latent is used both to strip the current noise level and to
re-noise at the next one. With n steps the schedule visits n evenly spaced
indices of the training table, ending at the noisiest one.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

TRAIN_STEPS = 1000


@dataclass
class NoiseSchedule:
    alphas_cumprod: torch.Tensor

    @classmethod
    def ddpm(cls, steps: int = TRAIN_STEPS, beta_start: float = 1e-4,
             beta_end: float = 0.02) -> "NoiseSchedule":
        betas = torch.linspace(beta_start, beta_end, steps)
        return cls(alphas_cumprod=torch.cumprod(1.0 - betas, dim=0))

    def timestep_indices(self, num_steps: int) -> list[int]:
        if num_steps < 1 or num_steps > len(self.alphas_cumprod):
            raise ValueError(f"num_steps must be in [1, {len(self.alphas_cumprod)}]")
        table = len(self.alphas_cumprod)
        return [table * (i + 1) // num_steps - 1 for i in range(num_steps)]


@torch.no_grad()
def invert_latent(unet, schedule: NoiseSchedule, z0: torch.Tensor,
                  context: torch.Tensor, num_steps: int) -> list[torch.Tensor]:
    """Trajectory [z_0, z_(1), ..., z_(num_steps)], increasingly noisy."""
    trajectory = [z0]
    z = z0
    prev_abar = torch.tensor(1.0)
    for index in schedule.timestep_indices(num_steps):
        abar = schedule.alphas_cumprod[index]
        t = torch.tensor([index])
        eps = unet(z, t, context)
        x0 = (z - torch.sqrt(1.0 - prev_abar) * eps) / torch.sqrt(prev_abar)
        z = torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * eps
        trajectory.append(z)
        prev_abar = abar
    return trajectory
