/**
 * Geodetic <-> local-frame conversion, a direct port of the server's math
 * so drag drops land on exactly the coordinates the server would compute.
 *
 * Local axes: x = East, y = Up, z = North; 1 unit = 1 meter.
 */

export const WGS84_A = 6378137.0;
export const WGS84_F = 1.0 / 298.257223563;
export const WGS84_E2 = WGS84_F * (2.0 - WGS84_F);

export interface Geo {
	lat: number;
	lon: number;
	height: number;
}

export interface Local {
	x: number;
	y: number;
	z: number;
}

type Vec3 = [number, number, number];

export interface Anchor {
	origin: Geo;
	originEcef: Vec3;
	east: Vec3;
	up: Vec3;
	north: Vec3;
}

const DEG = Math.PI / 180.0;

/** Normalize longitude into (-180, 180], matching the server. */
export function normalizeLon(lon: number): number {
	let out = lon % 360.0;
	if (out <= -180.0) out += 360.0;
	else if (out > 180.0) out -= 360.0;
	return out;
}

export function geodeticToEcef(p: Geo): Vec3 {
	const lat = p.lat * DEG;
	const lon = p.lon * DEG;
	const sinLat = Math.sin(lat);
	const cosLat = Math.cos(lat);
	const n = WGS84_A / Math.sqrt(1.0 - WGS84_E2 * sinLat * sinLat);
	return [
		(n + p.height) * cosLat * Math.cos(lon),
		(n + p.height) * cosLat * Math.sin(lon),
		(n * (1.0 - WGS84_E2) + p.height) * sinLat,
	];
}

export function ecefToGeodetic(x: number, y: number, z: number): Geo {
	const lon = Math.atan2(y, x);
	const hyp = Math.hypot(x, y);
	// iterate latitude; converges to machine precision in a few steps
	let lat = Math.atan2(z, hyp * (1.0 - WGS84_E2));
	let height = 0.0;
	for (let i = 0; i < 12; i++) {
		const sinLat = Math.sin(lat);
		const n = WGS84_A / Math.sqrt(1.0 - WGS84_E2 * sinLat * sinLat);
		height =
			Math.abs(lat) < 89.999 * DEG
				? hyp / Math.cos(lat) - n
				: z / sinLat - n * (1.0 - WGS84_E2);
		const latNew = Math.atan2(z, hyp * (1.0 - (WGS84_E2 * n) / (n + height)));
		if (Math.abs(latNew - lat) < 1e-15) {
			lat = latNew;
			break;
		}
		lat = latNew;
	}
	return { lat: lat / DEG, lon: normalizeLon(lon / DEG), height };
}

export function makeAnchor(origin: Geo): Anchor {
	const lat = origin.lat * DEG;
	const lon = origin.lon * DEG;
	const sinLat = Math.sin(lat);
	const cosLat = Math.cos(lat);
	const sinLon = Math.sin(lon);
	const cosLon = Math.cos(lon);
	return {
		origin,
		originEcef: geodeticToEcef(origin),
		east: [-sinLon, cosLon, 0.0],
		up: [cosLat * cosLon, cosLat * sinLon, sinLat],
		north: [-sinLat * cosLon, -sinLat * sinLon, cosLat],
	};
}

export function geoToLocal(anchor: Anchor, p: Geo): Local {
	const [ex, ey, ez] = geodeticToEcef(p);
	const [ox, oy, oz] = anchor.originEcef;
	const dx = ex - ox;
	const dy = ey - oy;
	const dz = ez - oz;
	const { east: e, up: u, north: n } = anchor;
	return {
		x: e[0] * dx + e[1] * dy + e[2] * dz,
		y: u[0] * dx + u[1] * dy + u[2] * dz,
		z: n[0] * dx + n[1] * dy + n[2] * dz,
	};
}

export function localToGeo(anchor: Anchor, p: Local): Geo {
	const { east: e, up: u, north: n } = anchor;
	const [ox, oy, oz] = anchor.originEcef;
	return ecefToGeodetic(
		ox + p.x * e[0] + p.y * u[0] + p.z * n[0],
		oy + p.x * e[1] + p.y * u[1] + p.z * n[1],
		oz + p.x * e[2] + p.y * u[2] + p.z * n[2],
	);
}

/**
 * Compass heading of a unit quaternion's forward axis (+z), degrees.
 * 0 = North (+z), 90 = East (+x).
 */
export function headingOf(q: [number, number, number, number]): number {
	const [w, x, y, z] = q;
	// forward = q * (0,0,1) * q^-1
	const fx = 2.0 * (x * z + w * y);
	const fz = 1.0 - 2.0 * (x * x + y * y);
	return Math.atan2(fx, fz) / DEG;
}
