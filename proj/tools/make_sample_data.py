#!/usr/bin/env python3
"""Regenerate the shipped sample corpus under data/.

Builds atom-mapped single-step reactions from a fragment library with RDKit,
embeds MMFF conformers for every product, and records RDKit canonical SMILES
for every molecule so the C++ test-suite has an external reference for
canonical-key equality. RDKit is only needed to regenerate the data; the
library and its tests never import it.

    python tools/make_sample_data.py --out data --count 1000 --seed 7
"""

import argparse
import json
import random
from pathlib import Path

from rdkit import Chem, RDLogger
from rdkit.Chem import AllChem

RDLogger.DisableLog("rdApp.*")

ARYL = [
    "[*:1]c1ccccc1", "[*:1]c1ccc(F)cc1", "[*:1]c1ccc(Cl)cc1", "[*:1]c1ccc(OC)cc1",
    "[*:1]c1ccc(C(F)(F)F)cc1", "[*:1]c1cccnc1", "[*:1]c1ccncc1", "[*:1]c1ccsc1",
    "[*:1]c1ccoc1", "[*:1]c1ccc2ccccc2c1", "[*:1]c1ccc(C#N)cc1", "[*:1]c1cc(C)ccc1C",
    "[*:1]c1ccc2[nH]ccc2c1", "[*:1]c1cnc(N)nc1", "[*:1]c1ccc(Br)cc1", "[*:1]c1cccc(O)c1",
]
ACYL = [
    "[*:1]C(=O)c1ccccc1", "[*:1]C(=O)c1ccc(F)cc1", "[*:1]C(=O)C1CCCCC1", "[*:1]C(=O)CC",
    "[*:1]C(=O)c1ccncc1", "[*:1]C(=O)c1ccco1", "[*:1]C(=O)CCc1ccccc1", "[*:1]C(=O)C1CC1",
    "[*:1]C(=O)c1ccc(Cl)cc1Cl", "[*:1]C(=O)COc1ccccc1", "[*:1]C(=O)c1cccs1", "[*:1]C(=O)C(C)C",
]
AMINE = [
    "[*:1]N1CCOCC1", "[*:1]N1CCCCC1", "[*:1]N1CCN(C)CC1", "[*:1]N1CCCC1", "[*:1]NCc1ccccc1",
    "[*:1]Nc1ccccc1", "[*:1]NCCO", "[*:1]N(C)C", "[*:1]NC1CCCCC1", "[*:1]N[C@@H](C)c1ccccc1",
    "[*:1]NCc1ccco1", "[*:1]N1CCC(O)CC1", "[*:1]NCC(=O)OC", "[*:1]Nc1ccc(F)cc1",
]
ALKYL = [
    "[*:1]Cc1ccccc1", "[*:1]CC", "[*:1]CCC", "[*:1]Cc1ccc(Cl)cc1", "[*:1]CC(=O)OCC",
    "[*:1]CCOC", "[*:1]Cc1cccnc1", "[*:1]CC1CC1", "[*:1]C/C=C/C",
]
ALKOXY = ["[*:1]OC", "[*:1]OCC", "[*:1]OCc1ccccc1", "[*:1]OC(C)C", "[*:1]OCCN(C)C", "[*:1]Oc1ccccc1"]
SULFONYL = ["[*:1]S(=O)(=O)c1ccc(C)cc1", "[*:1]S(=O)(=O)C", "[*:1]S(=O)(=O)c1ccccc1"]

LG = {
    "OH": "[*:1]O", "H": "[*:1][H]", "Br": "[*:1]Br", "Cl": "[*:1]Cl", "F": "[*:1]F",
    "BOH2": "[*:1]B(O)O", "Boc": "[*:1]C(=O)OC(C)(C)C", "OMe": "[*:1]OC",
    "NO2": "[*:1][N+](=O)[O-]",
}

# (name, left library, right library, left leaving group, right leaving group)
COUPLINGS = [
    ("amide", ACYL, AMINE, "OH", "H"),
    ("ester", ACYL, ALKOXY, "Cl", "H"),
    ("n_alkylation", ALKYL, AMINE, "Br", "H"),
    ("suzuki", ARYL, ARYL, "Br", "BOH2"),
    ("snar_ether", ARYL, ALKOXY, "F", "H"),
    ("sulfonamide", SULFONYL, AMINE, "Cl", "H"),
    ("aryl_amination", ARYL, AMINE, "Br", "H"),
]
# (name, library, product cap, reactant cap)
UNARY = [
    ("boc_deprotection", AMINE, "H", "Boc"),
    ("ester_hydrolysis", ACYL, "OH", "OMe"),
    ("nitro_reduction", ARYL, "H_N", "NO2"),
]


def frag(smiles, offset):
    """Fragment with atom maps offset+1.. on real atoms; dummy keeps label 1."""
    mol = Chem.MolFromSmiles(smiles)
    n = offset
    for atom in mol.GetAtoms():
        if atom.GetAtomicNum() == 0:
            continue
        n += 1
        atom.SetAtomMapNum(n)
    return mol, n


def cap(smiles):
    mol = Chem.MolFromSmiles(smiles, sanitize=False) if "[H]" in smiles else Chem.MolFromSmiles(smiles)
    for atom in mol.GetAtoms():
        if atom.GetAtomicNum() != 0:
            atom.SetAtomMapNum(0)
    return mol


def zip_pair(a, b):
    combo = Chem.molzip(a, b)
    combo = Chem.RemoveHs(combo, sanitize=False)
    Chem.SanitizeMol(combo)
    return combo


def renumber(product, reactants, rng, shuffle):
    """Relabel product maps to 1..N (output order, optionally permuted); drop stray maps."""
    product = Chem.MolFromSmiles(Chem.MolToSmiles(product))
    Chem.MolToSmiles(product)
    order_in_output = [int(x) for x in product.GetProp("_smilesAtomOutputOrder").strip("[],").split(",")]
    order = [a.GetAtomMapNum() for a in product.GetAtoms()]
    labels = list(range(1, len(order) + 1))
    if shuffle:
        rng.shuffle(labels)
    relabel = {}
    for rank, idx in enumerate(order_in_output):
        relabel[product.GetAtomWithIdx(idx).GetAtomMapNum()] = labels[rank]
    for atom in product.GetAtoms():
        atom.SetAtomMapNum(relabel[atom.GetAtomMapNum()])
    out = []
    for r in reactants:
        r = Chem.Mol(r)
        for atom in r.GetAtoms():
            atom.SetAtomMapNum(relabel.get(atom.GetAtomMapNum(), 0))
        out.append(r)
    return product, out


def unmapped_canonical(mol):
    m = Chem.Mol(mol)
    for atom in m.GetAtoms():
        atom.SetAtomMapNum(0)
    return Chem.MolToSmiles(m)


def make_reaction(rng):
    if rng.random() < 0.78:
        name, left, right, lg_l, lg_r = rng.choice(COUPLINGS)
        a, n = frag(rng.choice(left), 0)
        b, _ = frag(rng.choice(right), n)
        product = zip_pair(a, b)
        reactants = [zip_pair(a, cap(LG[lg_l])), zip_pair(b, cap(LG[lg_r]))]
    else:
        name, lib, prod_cap, react_cap = rng.choice(UNARY)
        a, _ = frag(rng.choice(lib), 0)
        if prod_cap == "H_N":
            product = zip_pair(a, cap("[*:1]N"))
            # amine nitrogen comes from the nitro group: give it a map in both
            nitro = zip_pair(a, cap(LG["NO2"]))
            for atom in product.GetAtoms():
                if atom.GetAtomMapNum() == 0:
                    atom.SetAtomMapNum(900)
            for atom in nitro.GetAtoms():
                if atom.GetSymbol() == "N" and atom.GetAtomMapNum() == 0:
                    atom.SetAtomMapNum(900)
            reactants = [nitro]
        else:
            product = zip_pair(a, cap(LG[prod_cap]))
            if prod_cap == "OH":
                for atom in product.GetAtoms():
                    if atom.GetAtomMapNum() == 0:
                        atom.SetAtomMapNum(901)
                reactant = zip_pair(a, cap(LG[react_cap]))
                # the ester oxygen attached to the acyl carbon carries the hydroxyl map
                for atom in reactant.GetAtoms():
                    if atom.GetSymbol() == "O" and atom.GetAtomMapNum() == 0 and \
                            any(nb.GetAtomMapNum() != 0 for nb in atom.GetNeighbors()):
                        atom.SetAtomMapNum(901)
                        break
                reactants = [reactant]
            else:
                reactants = [zip_pair(a, cap(LG[react_cap]))]
    if product.GetNumAtoms() < 5:
        return None
    product, reactants = renumber(product, reactants, rng, shuffle=rng.random() < 0.3)
    rng.shuffle(reactants)
    return name, product, reactants


def conformer_record(smiles, mol, seed):
    molh = Chem.AddHs(mol)
    if AllChem.EmbedMolecule(molh, randomSeed=seed) != 0:
        return None
    AllChem.MMFFOptimizeMolecule(molh)
    pos = molh.GetConformer().GetPositions()
    atoms = []
    for atom in molh.GetAtoms():
        if atom.GetAtomicNum() == 1:
            continue
        xyz = [round(float(v), 6) for v in pos[atom.GetIdx()]]
        atoms.append({"map": atom.GetAtomMapNum() or None, "element": atom.GetSymbol(), "xyz": xyz})
    return {"id": smiles, "atoms": atoms}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    ap.add_argument("--count", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    seen = set()
    lines, conformers, reference = [], [], {}
    while len(lines) < args.count:
        made = make_reaction(rng)
        if made is None:
            continue
        name, product, reactants = made
        p_smi = Chem.MolToSmiles(product)
        if p_smi in seen:
            continue
        rec = conformer_record(p_smi, Chem.MolFromSmiles(p_smi), seed=len(lines) + 1)
        if rec is None:
            continue
        seen.add(p_smi)
        r_smis = [Chem.MolToSmiles(r) for r in reactants]
        lines.append(".".join(r_smis) + ">>" + p_smi)
        conformers.append(rec)
        reference[p_smi] = unmapped_canonical(product)
        for s, r in zip(r_smis, reactants):
            reference[s] = unmapped_canonical(r)

    (out / "sample_reactions.txt").write_text("\n".join(lines) + "\n")
    with open(out / "sample_conformers.jsonl", "w") as f:
        for rec in conformers:
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    with open(out / "sample_molecules.tsv", "w") as f:
        for smi in sorted(reference):
            f.write(f"{smi}\t{reference[smi]}\n")


if __name__ == "__main__":
    main()
