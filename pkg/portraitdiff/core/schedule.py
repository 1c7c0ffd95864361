"""Noise schedule and DDIM sampler"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import torch

from ..models.config import SamplerConfig, ScheduleConfig

logger = logging.getLogger(__name__)

NoiseFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Beta sequence with derived cumulative alpha products"""
    betas: torch.Tensor
    alphas_cumprod: torch.Tensor = field(init=False)

    def __post_init__(self):
        betas = self.betas.double()
        if betas.dim() != 1 or betas.numel() < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if (betas <= 0).any() or (betas >= 1).any():
            raise ValueError("betas must lie in (0, 1)")
        if betas.numel() > 1 and (betas[1:] < betas[:-1]).any():
            raise ValueError("betas must be non-decreasing")
        object.__setattr__(self, 'betas', betas.float())
        object.__setattr__(self, 'alphas_cumprod', torch.cumprod(1.0 - betas, dim=0).float())

    @classmethod
    def linear(cls, num_train_timesteps: int, beta_start: float, beta_end: float) -> 'NoiseSchedule':
        return cls(torch.linspace(beta_start, beta_end, num_train_timesteps, dtype=torch.float64))

    @classmethod
    def from_config(cls, config: ScheduleConfig) -> 'NoiseSchedule':
        return cls.linear(config.num_train_timesteps, config.beta_start, config.beta_end)

    @property
    def num_train_timesteps(self) -> int:
        return self.betas.numel()

    def alpha_bar(self, timesteps: torch.Tensor) -> torch.Tensor:
        return self.alphas_cumprod.to(timesteps.device)[timesteps]

    def add_noise(self, x0: torch.Tensor, noise: torch.Tensor, timesteps: torch.Tensor) -> torch.Tensor:
        """q(x_t | x_0) = sqrt(ab) x0 + sqrt(1 - ab) eps, timesteps of shape (N,)"""
        ab = self.alpha_bar(timesteps).to(x0.dtype).view(-1, *([1] * (x0.dim() - 1)))
        return ab.sqrt() * x0 + (1 - ab).sqrt() * noise

    def sample_timesteps(self, n: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        return torch.randint(0, self.num_train_timesteps, (n,), generator=generator)


class DDIMSampler:
    """
    Deterministic DDIM sampler (eta = 0 by default)

    Args:
        schedule: training noise schedule
        steps: number of denoising steps
        eta: stochasticity; 0 gives the ancestral-free update
    """

    def __init__(self, schedule: NoiseSchedule, steps: int = 20, eta: float = 0.0):
        if steps < 1:
            raise ValueError("sampler needs at least one step")
        self.schedule = schedule
        self.steps = steps
        self.eta = eta

    @classmethod
    def from_config(cls, schedule: NoiseSchedule, config: SamplerConfig,
                    stochastic: bool = False) -> 'DDIMSampler':
        return cls(schedule, config.steps, config.eta if stochastic else 0.0)

    def timesteps(self) -> List[int]:
        """Descending timesteps, first is T-1, last is 0 when steps > 1"""
        t_max = self.schedule.num_train_timesteps - 1
        ts = torch.linspace(t_max, 0, self.steps).round().long().tolist()
        return list(dict.fromkeys(ts))

    def step(
        self,
        x_t: torch.Tensor,
        noise_pred: torch.Tensor,
        t: int,
        t_prev: Optional[int],
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        """One update x_t -> x_{t_prev}; t_prev None means the clean sample"""
        ab = self.schedule.alphas_cumprod[t].to(x_t)
        x0 = (x_t - (1 - ab).sqrt() * noise_pred) / ab.sqrt()
        if t_prev is None:
            return x0
        ab_prev = self.schedule.alphas_cumprod[t_prev].to(x_t)
        sigma = self.eta * ((1 - ab_prev) / (1 - ab) * (1 - ab / ab_prev)).sqrt()
        direction = (1 - ab_prev - sigma ** 2).clamp(min=0).sqrt() * noise_pred
        x_prev = ab_prev.sqrt() * x0 + direction
        if self.eta > 0:
            z = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype).to(x_t.device)
            x_prev = x_prev + sigma * z
        return x_prev

    @torch.no_grad()
    def sample(
        self,
        predict_noise: NoiseFn,
        x_T: torch.Tensor,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        """Denoise x_T with predict_noise(x_t, t) and return the predicted clean latents"""
        ts = self.timesteps()
        x_t = x_T
        for i, t in enumerate(ts):
            t_prev = ts[i + 1] if i + 1 < len(ts) else None
            eps = predict_noise(x_t, torch.tensor(t, device=x_t.device))
            x_t = self.step(x_t, eps, t, t_prev, generator)
        return x_t
