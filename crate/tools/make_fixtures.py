"""Regenerate the committed test fixtures with RDKit.

    python3 tools/make_fixtures.py

Writes into crates/core/tests/fixtures/:
  parser_reference.tsv   per-atom degree / aromatic / total H / ring flags for
                         200 drug-like molecules from RDKit's bundled NCI sample
  toy_logs.csv           small solubility table with InChIKeys
"""

import os
import random

from rdkit import Chem, RDConfig, rdBase
from rdkit.Chem import Descriptors

ELEMENTS = set(
    "K Y V Sm Dy In Lu Hg Co Mg Cu Rh Hf O As Ge Au Mo Br Ce Zr Ag Ba N Cr Sr Fe Gd I Al B Se Pr "
    "Te Cd Pd Si Zn Pb Sn Cl Mn Cs Na S Ti Ni Ru Ca Nd W H Li Sb Bi La Pt Nb P F C Re Ta Ir Be Tl".split()
)

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures")

# log S (log10 mol/L) at about 25 C, rounded literature values; illustrative only.
TOY = [
    ("CCO", 1.10),
    ("CC(=O)O", 1.22),
    ("CC(C)=O", 0.38),
    ("CCOCC", -0.09),
    ("CCCCO", 0.00),
    ("CCCCCCCCO", -2.39),
    ("CCCCCC", -3.84),
    ("C1CCCCC1", -3.10),
    ("c1ccccc1", -1.64),
    ("Cc1ccccc1", -2.21),
    ("Cc1ccc(C)cc1", -2.77),
    ("C=Cc1ccccc1", -2.82),
    ("Oc1ccccc1", 0.00),
    ("Nc1ccccc1", -0.41),
    ("Clc1ccccc1", -2.38),
    ("O=[N+]([O-])c1ccccc1", -1.80),
    ("OC(=O)c1ccccc1", -1.55),
    ("Clc1ccc(Cl)cc1", -3.27),
    ("c1ccc2ccccc2c1", -3.60),
    ("c1ccc(cc1)-c1ccccc1", -4.34),
    ("c1ccc2cc3ccccc3cc2c1", -6.35),
    ("c1ccc2c(c1)ccc1ccccc12", -5.26),
    ("ClC(Cl)Cl", -1.17),
    ("ClC(Cl)(Cl)Cl", -2.31),
    ("CCOC(C)=O", -0.04),
    ("c1ccncc1", 1.10),
    ("NC(N)=O", 0.96),
    ("CC(=O)Nc1ccc(O)cc1", -1.03),
    ("CC(=O)Oc1ccccc1C(=O)O", -1.72),
    ("Cn1cnc2c1c(=O)n(C)c(=O)n2C", -0.88),
    ("CC(C)Cc1ccc(cc1)C(C)C(=O)O", -3.62),
    ("Clc1c(Cl)c(Cl)c(Cl)c(Cl)c1Cl", -7.56),
    ("OCC1OC(O)C(O)C(O)C1O", 0.74),
    ("c1ccc2ccc3cccc4ccc1c2c34", -6.18),
    ("CC(C)O", 0.43),
    ("OCCO", 1.05),
]


def pick_drug_like(n=200, seed=2024):
    path = os.path.join(RDConfig.RDDataDir, "NCI", "first_5K.smi")
    pool = []
    with open(path) as f:
        for line in f:
            smi = line.split()[0]
            m = Chem.MolFromSmiles(smi)
            if m is None or len(Chem.GetMolFrags(m)) != 1:
                continue
            if any(a.GetSymbol() not in ELEMENTS for a in m.GetAtoms()):
                continue
            if not 150 <= Descriptors.MolWt(m) <= 600:
                continue
            pool.append(m)
    rng = random.Random(seed)
    chosen = rng.sample(pool, n)
    out = []
    for i, m in enumerate(chosen):
        if i % 7 == 3:
            k = Chem.Mol(m)
            Chem.Kekulize(k, clearAromaticFlags=True)
            smi = Chem.MolToSmiles(k, kekuleSmiles=True)
        else:
            smi = Chem.MolToSmiles(m)
        out.append(smi)
    return out


def write_reference(smiles_list):
    with open(os.path.join(OUT, "parser_reference.tsv"), "w") as f:
        f.write("# generated by tools/make_fixtures.py with RDKit %s\n" % rdBase.rdkitVersion)
        f.write("mol\tatom\tsymbol\tdegree\taromatic\ttotal_h\tin_ring\tsmiles\n")
        for i, smi in enumerate(smiles_list):
            m = Chem.MolFromSmiles(smi)
            for a in m.GetAtoms():
                f.write(
                    "%d\t%d\t%s\t%d\t%d\t%d\t%d\t%s\n"
                    % (
                        i,
                        a.GetIdx(),
                        a.GetSymbol(),
                        a.GetDegree(),
                        int(a.GetIsAromatic()),
                        a.GetTotalNumHs(),
                        int(a.IsInRing()),
                        smi if a.GetIdx() == 0 else "",
                    )
                )


def write_toy():
    with open(os.path.join(OUT, "toy_logs.csv"), "w") as f:
        f.write("SMILES,InChIKey,logS\n")
        for smi, logs in TOY:
            m = Chem.MolFromSmiles(smi)
            f.write("%s,%s,%.2f\n" % (smi, Chem.MolToInchiKey(m), logs))


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    write_reference(pick_drug_like())
    write_toy()
