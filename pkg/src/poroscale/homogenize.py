"""Effective tensors per coarse cell from local Dirichlet problems.

For each coarse cell the fine-grid property values are restricted to the
cell and rescaled to the unit cube. Permeability solves d scalar problems
with affine boundary data psi_j = x_j and averages the flux,

    k*_lj = (1/|K|) integral_K k(x) d(psi_l)/dx_j dx,

which discretely equals the energy inner product of the solutions, so the
raw matrix is symmetric up to solver tolerance and is symmetrized on
return. Elasticity solves one vector problem per strain component with
boundary data u = Lambda^(rs) x (Lambda the symmetrized unit strain) and
forms the energy Gram matrix of the solutions; weighting its shear
rows/columns by sqrt(2) yields the stored stiffness matrix convention of
:mod:`poroscale.elasticity`.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .elasticity import (
    isotropic_stiffness,
    mandel_weights,
    n_strain_components,
    strain_component_pairs,
    unit_strain_tensor,
)
from .errors import ParameterError
from .fem import DirichletSystem, LUSolver, P1Space
from .grid import StructuredGrid

SOLVE_TOL = 1e-8


@dataclass
class CellPatch:
    """Material data of one coarse cell on the rescaled unit cube.

    ``perm`` and ``young`` are nodal values on the shared patch grid,
    flattened in C order.
    """

    cell_index: tuple
    perm: np.ndarray
    young: np.ndarray
    eta: float


def patch_ratio(fine_grid, coarse_cells):
    """Fine cells per coarse cell and axis; validates grid compatibility."""
    coarse_cells = tuple(int(n) for n in coarse_cells)
    fine = fine_grid.cells_per_axis
    if len(coarse_cells) != len(fine):
        raise ParameterError("coarse grid dimension does not match the fine grid")
    if any(n < 1 for n in coarse_cells):
        raise ParameterError("coarse cell counts must be positive")
    if len(set(fine)) != 1 or len(set(coarse_cells)) != 1:
        raise ParameterError("cell problems need cubic cells: equal counts per axis")
    if fine[0] % coarse_cells[0]:
        raise ParameterError(
            f"fine cells {fine[0]} not divisible by coarse cells {coarse_cells[0]}"
        )
    return fine[0] // coarse_cells[0]


def extract_patches(fine_grid, coarse_cells, fields):
    """Restrict nodal fields to coarse cells, row-major cell order.

    Returns ``(patch_grid, patches)`` with the patch grid on the unit cube.
    Patches share boundary slices with their neighbours (node overlap).
    """
    d = fine_grid.dimension
    r = patch_ratio(fine_grid, coarse_cells)
    patch_grid = StructuredGrid((r,) * d)
    perm = np.asarray(fields.perm, dtype=float).reshape(fine_grid.node_shape)
    young = np.asarray(fields.young, dtype=float).reshape(fine_grid.node_shape)
    patches = []
    for index in np.ndindex(*tuple(coarse_cells)):
        window = tuple(slice(i * r, i * r + r + 1) for i in index)
        patches.append(
            CellPatch(
                cell_index=index,
                perm=perm[window].reshape(-1).copy(),
                young=young[window].reshape(-1).copy(),
                eta=fields.eta,
            )
        )
    return patch_grid, patches


def effective_permeability(
    space, perm, tol=SOLVE_TOL, with_asymmetry=False, where="node"
):
    """Symmetrized effective permeability of one patch, (d, d).

    ``where='element'`` takes per-element coefficients, which keeps sharp
    material interfaces aligned with element rows exact.
    """
    grid = space.grid
    d = grid.dimension
    diffusion = space.assemble_diffusion(perm, where=where)
    bnodes = grid.all_boundary_nodes()
    system = DirichletSystem(diffusion, bnodes)
    bvals = grid.node_coords[system.dofs]  # psi_j = x_j on the boundary
    rhs = system.fold_rhs(np.zeros((grid.n_nodes, d)), bvals)
    psi = LUSolver(system.matrix, tol).solve(rhs)

    k_e = space.element_values(perm, where=where)
    grads = space.class_gradients[grid.element_class]
    # per-element gradient of each solution: (n_elem, d components, d problems)
    gpsi = np.einsum("eia,eil->eal", grads, psi[grid.elements])
    volume = grid.element_volume * grid.elements.shape[0]
    raw = grid.element_volume / volume * np.einsum("e,ejl->lj", k_e, gpsi)
    kstar = 0.5 * (raw + raw.T)
    if with_asymmetry:
        return kstar, float(np.abs(raw - raw.T).max())
    return kstar


def effective_elasticity(
    space, young, eta, tol=SOLVE_TOL, with_asymmetry=False, where="node"
):
    """Effective stiffness matrix of one patch, (m, m), sqrt(2) convention."""
    grid = space.grid
    d = grid.dimension
    m = n_strain_components(d)
    young_e = space.element_values(young, where=where)
    C_e = isotropic_stiffness(young_e, eta, d)
    stiffness = space.assemble_elasticity(C_e)

    bnodes = grid.all_boundary_nodes()
    vdofs = (bnodes[:, None] * d + np.arange(d)).reshape(-1)
    system = DirichletSystem(stiffness, vdofs)
    coords = grid.node_coords[bnodes]
    bvals = np.empty((vdofs.size, m))
    for I, pair in enumerate(strain_component_pairs(d)):
        lam = unit_strain_tensor(pair, d)
        bvals[:, I] = (coords @ lam.T).reshape(-1)  # u(x) = Lambda x, node-major
    rhs = system.fold_rhs(np.zeros((grid.n_nodes * d, m)), bvals)
    phi = LUSolver(system.matrix, tol).solve(rhs)

    volume = grid.element_volume * grid.elements.shape[0]
    energy = phi.T @ (stiffness @ phi) / volume
    w = mandel_weights(d)
    raw = np.outer(w, w) * energy
    cstar = 0.5 * (raw + raw.T)
    if with_asymmetry:
        return cstar, float(np.abs(raw - raw.T).max())
    return cstar


@dataclass
class EffectiveTensors:
    """Per-coarse-cell effective tensors, row-major cell order."""

    coarse_cells: tuple
    perm: np.ndarray  # (n_cells, d, d)
    stiffness: np.ndarray  # (n_cells, m, m)

    @property
    def n_cells(self):
        return self.perm.shape[0]


def homogenize_patch(space, patch, tol=SOLVE_TOL):
    kstar = effective_permeability(space, patch.perm, tol)
    cstar = effective_elasticity(space, patch.young, patch.eta, tol)
    return kstar, cstar


def homogenize_domain(fine_grid, coarse_cells, fields, threads=1, tol=SOLVE_TOL):
    """Effective tensors of every coarse cell.

    ``threads`` > 1 distributes patches over a thread pool; results are
    ordered row-major by coarse cell regardless.
    """
    coarse_cells = tuple(int(n) for n in coarse_cells)
    patch_grid, patches = extract_patches(fine_grid, coarse_cells, fields)
    space = P1Space(patch_grid)
    # warm shared caches before the pool touches them
    space.class_gradients, space.class_strain

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda p: homogenize_patch(space, p, tol), patches))
    else:
        results = [homogenize_patch(space, p, tol) for p in patches]

    perm = np.stack([r[0] for r in results])
    stiffness = np.stack([r[1] for r in results])
    return EffectiveTensors(
        coarse_cells=coarse_cells, perm=perm, stiffness=stiffness
    )
