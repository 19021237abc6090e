"""Regenerate src/specvi/data/solar_system_j2000.csv.

Heliocentric J2000 states are computed from the approximate mean Keplerian
elements published by JPL (Standish, "Keplerian Elements for Approximate
Positions of the Major Planets", table valid 1800-2050), then shifted to the
barycentric frame. Earth is the Earth-Moon barycenter. Accuracy is at the
1e-3 AU level, adequate for qualitative long-run experiments.
"""

import math
import sys
from pathlib import Path

import numpy as np

from specvi.problems import GAUSS_G, solve_kepler

# name: a [AU], e, I [deg], L [deg], long. perihelion [deg], long. node [deg], mass [Msun]
ELEMENTS = {
    "Mercury": (0.38709927, 0.20563593, 7.00497902, 252.25032350, 77.45779628, 48.33076593, 1.6601141530543488e-7),
    "Venus": (0.72333566, 0.00677672, 3.39467605, 181.97909950, 131.60246718, 76.67984255, 2.4478382877847715e-6),
    "Earth": (1.00000261, 0.01671123, -0.00001531, 100.46457166, 102.93768193, 0.0, 3.0404326462685257e-6),
    "Mars": (1.52371034, 0.09339410, 1.84969142, -4.55343205, -23.94362959, 49.55953891, 3.2271560375549977e-7),
    "Jupiter": (5.20288700, 0.04838624, 1.30439695, 34.39644051, 14.72847983, 100.47390909, 9.547919384243222e-4),
    "Saturn": (9.53667594, 0.05386179, 2.48599187, 49.95424423, 92.59887831, 113.66242448, 2.858859806661029e-4),
    "Uranus": (19.18916464, 0.04725744, 0.77263783, 313.23810451, 170.95427630, 74.01692503, 4.3662440433515637e-5),
    "Neptune": (30.06992276, 0.00859048, 1.77004347, -55.12002969, 44.96476227, 131.78422574, 5.151389020535497e-5),
    "Pluto": (39.48211675, 0.24882730, 17.14001206, 238.92903833, 224.06891629, 110.30393684, 7.407e-9),
}


def heliocentric_state(a, e, inc, L, varpi, node, mass):
    mu = GAUSS_G * (1.0 + mass)
    inc, L, varpi, node = (math.radians(x) for x in (inc, L, varpi, node))
    omega = varpi - node
    M = L - varpi
    E = solve_kepler(M, e)
    n = math.sqrt(mu / a**3)
    b = a * math.sqrt(1 - e * e)
    cE, sE = math.cos(E), math.sin(E)
    xp = np.array([a * (cE - e), b * sE, 0.0])
    vp = np.array([-a * n * sE, b * n * cE, 0.0]) / (1 - e * cE)

    def rz(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])

    def rx(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])

    R = rz(node) @ rx(inc) @ rz(omega)
    return R @ xp, R @ vp


def main(out):
    names = ["Sun"] + list(ELEMENTS)
    masses = [1.0]
    pos = [np.zeros(3)]
    vel = [np.zeros(3)]
    for name, el in ELEMENTS.items():
        x, v = heliocentric_state(*el)
        masses.append(el[-1])
        pos.append(x)
        vel.append(v)
    masses = np.array(masses)
    pos = np.array(pos)
    vel = np.array(vel)
    pos -= masses @ pos / masses.sum()
    vel -= masses @ vel / masses.sum()
    with open(out, "w") as fh:
        fh.write("# Barycentric ecliptic J2000 states (2000-01-01 12:00 TDB) from mean elements.\n")
        fh.write("# Units: solar masses, AU, AU/day. Use G = 0.01720209895**2.\n")
        fh.write("name,mass,x,y,z,vx,vy,vz\n")
        for nm, m, x, v in zip(names, masses, pos, vel):
            fh.write(",".join([nm, repr(float(m))] + [repr(float(c)) for c in (*x, *v)]) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/specvi/data/solar_system_j2000.csv")
