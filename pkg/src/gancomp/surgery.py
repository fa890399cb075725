"""Channel surgery: rebuild a generator with pruned channel dimensions.

Removing output channel i of layer t deletes layer t's filter and injection
row for i, the input slice i of layer t+1's kernel (channel i's outgoing
weights), and the matching tap-readout input slice. Surviving weights are
copied verbatim with channel order preserved, so the pruned model equals the
original with those channels' activations forced to zero.
"""

from __future__ import annotations

import torch

from .errors import PlanError
from .models import Generator
from .pruning import PruningPlan
from .specs import GeneratorSpec, LayerSpec


def surgery_remove_channels(generator: Generator, plan: PruningPlan) -> Generator:
    plan.validate(generator)
    spec = generator.spec
    keep = {}
    for t in range(spec.num_layers):
        removed = set(plan.remove.get(t, ()))
        if removed and t not in spec.prunable_layers():
            raise PlanError(f"layer {t} is not prunable (output layer channels are structural)")
        keep[t] = [i for i in range(spec.layers[t].out_channels) if i not in removed]
        if not keep[t]:
            raise PlanError(f"layer {t}: plan removes every channel")

    new_layers = []
    for t, layer in enumerate(spec.layers):
        in_ch = len(keep[t - 1]) if t > 0 else layer.in_channels
        new_layers.append(LayerSpec(in_channels=in_ch, out_channels=len(keep[t]),
                                    kernel_size=layer.kernel_size, upsample=layer.upsample,
                                    activation=layer.activation, leaky_slope=layer.leaky_slope))
    new_spec = GeneratorSpec(layers=tuple(new_layers), latent_dim=spec.latent_dim,
                             output_resolution=spec.output_resolution,
                             output_channels=spec.output_channels,
                             tap_layers=spec.tap_layers,
                             base_resolution=spec.base_resolution)
    pruned = Generator(new_spec)
    with torch.no_grad():
        pruned.base.weight.copy_(generator.base.weight)
        pruned.base.bias.copy_(generator.base.bias)
        for t in range(spec.num_layers):
            out_idx = torch.tensor(keep[t], dtype=torch.long)
            w = generator.convs[t].weight.index_select(0, out_idx)
            if t > 0:
                in_idx = torch.tensor(keep[t - 1], dtype=torch.long)
                w = w.index_select(1, in_idx)
            pruned.convs[t].weight.copy_(w)
            pruned.convs[t].bias.copy_(generator.convs[t].bias.index_select(0, out_idx))
            pruned.injects[t].weight.copy_(generator.injects[t].weight.index_select(0, out_idx))
            if t in spec.tap_layers:
                tap = generator.taps[str(t)]
                pruned.taps[str(t)].weight.copy_(tap.weight.index_select(1, out_idx))
                pruned.taps[str(t)].bias.copy_(tap.bias)
    return pruned
