"""Generate the S2 reference fixture used by the dgg oracle tests.

Uses the independent `s2sphere` package. One JSON object per line:
  lat, lng          input point in degrees
  tokens            cell tokens for levels 0..30 of the containing cell
  centers           {level: [lat, lng]} centers for a few levels
  leaf_id           decimal string of the level-30 cell id
"""
import json
import random
import sys

import s2sphere

CENTER_LEVELS = [1, 5, 10, 15, 22, 30]


def main(path, n=1200, seed=20221019):
    rng = random.Random(seed)
    with open(path, "w") as out:
        for k in range(n):
            if k < 200:
                # dense cluster around eastern China, where the POI fixture lives
                lat = rng.uniform(18.0, 45.0)
                lng = rng.uniform(100.0, 125.0)
            else:
                lat = rng.uniform(-90.0, 90.0)
                lng = rng.uniform(-180.0, 180.0)
            leaf = s2sphere.CellId.from_lat_lng(s2sphere.LatLng.from_degrees(lat, lng))
            tokens = [leaf.parent(level).to_token() for level in range(31)]
            centers = {}
            for level in CENTER_LEVELS:
                ll = leaf.parent(level).to_lat_lng()
                centers[str(level)] = [ll.lat().degrees, ll.lng().degrees]
            rec = {
                "lat": lat,
                "lng": lng,
                "leaf_id": str(leaf.id()),
                "tokens": tokens,
                "centers": centers,
            }
            out.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
