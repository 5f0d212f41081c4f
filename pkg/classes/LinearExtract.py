import numpy as np

from classes.Mlp import Layer, MlpModel
from tools.errors import DegeneratePairError, InputError

DEGENERATE_TOL = 1e-9


class LinearModel:
    """
    Linear decision rule: class 1 iff normal . x + offset >= 0.

    Args:
        normal (np.ndarray): Boundary normal, pointing toward class 1.
        offset (float): Bias term.
    """

    def __init__(self, normal, offset):
        normal = np.array(normal, dtype=float).reshape(-1)
        if not np.all(np.isfinite(normal)) or not np.isfinite(offset):
            raise InputError("linear model parameters must be finite")
        if not np.any(normal):
            raise InputError("the normal vector cannot be all zero")
        normal.flags.writeable = False
        self.normal = normal
        self.offset = float(offset)

    def decision(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.normal + self.offset

    def predict_labels(self, X):
        return (self.decision(X) >= 0).astype(int)

    def as_mlp(self):
        """The same rule as a one-layer sigmoid MlpModel."""
        layer = Layer(self.normal.reshape(1, -1), np.array([self.offset]), "sigmoid")
        return MlpModel([layer], self.normal.shape[0])


def extract_linear(cf, ccf, ccf_label):
    """
    Recover a linear cloud model from one CF/CCF pair.

    The midpoint of the pair lies on the boundary and the pair is aligned with
    the boundary normal, so the normal is the unit vector cf - ccf, flipped
    when the CCF is the class-1 member.

    Args:
        cf (np.ndarray): The counterfactual of a query.
        ccf (np.ndarray): The counterfactual of cf.
        ccf_label (int): Cloud label of ccf (cf has the other one).

    Returns:
        LinearModel: Unit normal and offset -normal . midpoint.
    """
    cf = np.asarray(cf, dtype=float).reshape(-1)
    ccf = np.asarray(ccf, dtype=float).reshape(-1)
    if cf.shape != ccf.shape:
        raise InputError(f"shape mismatch {cf.shape} vs {ccf.shape}")
    direction = cf - ccf
    length = np.linalg.norm(direction)
    if length < DEGENERATE_TOL:
        raise DegeneratePairError("cf and ccf coincide; the pair defines no direction")
    if int(ccf_label) == 1:
        direction = -direction
    normal = direction / length
    midpoint = 0.5 * (cf + ccf)
    return LinearModel(normal, -float(normal @ midpoint))
