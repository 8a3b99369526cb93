"""
Learning rate schedules for the optimizer loops.

Note that each schedule expects 1-based indexation of training steps.
"""
import math


class BaseDecay:

    def __init__(self, skip_first=True):
        self.skip_first = skip_first

    def __call__(self, step):
        if self.skip_first:
            step -= 1
        return self._decay(step)

    def _decay(self, step):
        raise NotImplementedError()


class ConstantDecay(BaseDecay):
    """Returns the same learning rate at every step."""

    def __init__(self, constant=1e-3, **params):
        super().__init__(**params)
        self.constant = constant

    def _decay(self, step):
        return self.constant


class StepDecay(BaseDecay):
    """Drops the learning rate every N steps using a stepwise function."""

    def __init__(self,
                 init_rate: float=1e-3,
                 drop: float=0.5,
                 steps_before_drop: int=1000,
                 **params):

        super().__init__(**params)
        self.init_rate = init_rate
        self.drop = drop
        self.steps_before_drop = steps_before_drop

    def _decay(self, step):
        power = math.floor(step / self.steps_before_drop)
        return self.init_rate * (self.drop ** power)


class ExponentialDecay(BaseDecay):
    """Exponentially decreases the learning rate from `init_rate`."""

    def __init__(self,
                 init_rate: float=1e-3,
                 decay_coef: float=1e-3,
                 **params):

        super().__init__(**params)
        self.init_rate = init_rate
        self.decay_coef = decay_coef

    def _decay(self, step):
        return self.init_rate * math.exp(-self.decay_coef * step)


def create_schedule(kind, lr, drop=0.5, steps_before_drop=1000):
    """Builds the schedule named by `[train] lr_schedule`."""
    if kind == 'constant':
        return ConstantDecay(lr)
    if kind == 'step':
        return StepDecay(lr, drop, steps_before_drop)
    if kind == 'exponential':
        return ExponentialDecay(lr, drop)
    raise ValueError('unknown learning rate schedule: %r' % kind)
