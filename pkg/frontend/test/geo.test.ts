import { describe, expect, it } from "vitest";

import {
	ecefToGeodetic,
	geodeticToEcef,
	geoToLocal,
	headingOf,
	localToGeo,
	makeAnchor,
	normalizeLon,
} from "../src/geo.js";

const ORIGIN = { lat: 41.8781, lon: -87.6298, height: 12.0 };

// frozen from the server implementation; the console must agree exactly
const FIXTURES = {
	north10: { lat: 41.87819003239846, lon: -87.6298, height: 12.000007855705917 },
	mix: { lat: 41.87773987016691, lon: -87.6294988291416, height: 15.000174630433321 },
	fwdLocal: { x: -58.10545549419048, y: 7.9989506018465235, z: 99.96438435156833 },
};

describe("geo port parity", () => {
	it("10 m north matches the server's conversion to 1e-9 deg", () => {
		const g = localToGeo(makeAnchor(ORIGIN), { x: 0, y: 0, z: 10 });
		expect(g.lat).toBeCloseTo(FIXTURES.north10.lat, 9);
		expect(g.lon).toBeCloseTo(FIXTURES.north10.lon, 9);
		expect(g.height).toBeCloseTo(FIXTURES.north10.height, 6);
	});

	it("mixed east/up/south offset matches the server", () => {
		const g = localToGeo(makeAnchor(ORIGIN), { x: 25.0, y: 3.0, z: -40.0 });
		expect(g.lat).toBeCloseTo(FIXTURES.mix.lat, 9);
		expect(g.lon).toBeCloseTo(FIXTURES.mix.lon, 9);
		expect(g.height).toBeCloseTo(FIXTURES.mix.height, 6);
	});

	it("geoToLocal matches the server to 1e-6 m", () => {
		const l = geoToLocal(makeAnchor(ORIGIN), { lat: 41.879, lon: -87.6305, height: 20.0 });
		expect(l.x).toBeCloseTo(FIXTURES.fwdLocal.x, 6);
		expect(l.y).toBeCloseTo(FIXTURES.fwdLocal.y, 6);
		expect(l.z).toBeCloseTo(FIXTURES.fwdLocal.z, 6);
	});
});

describe("round trips", () => {
	it("local -> geo -> local within 1 mm over random points", () => {
		const anchor = makeAnchor(ORIGIN);
		let s = 12345;
		const rand = () => ((s = (s * 1103515245 + 12345) % 2147483648) / 2147483648) * 2 - 1;
		for (let i = 0; i < 500; i++) {
			const p = { x: rand() * 5000, y: rand() * 200, z: rand() * 5000 };
			const back = geoToLocal(anchor, localToGeo(anchor, p));
			expect(Math.hypot(back.x - p.x, back.y - p.y, back.z - p.z)).toBeLessThan(1e-3);
		}
	});

	it("ecef round trip", () => {
		const [x, y, z] = geodeticToEcef(ORIGIN);
		const g = ecefToGeodetic(x, y, z);
		expect(g.lat).toBeCloseTo(ORIGIN.lat, 9);
		expect(g.lon).toBeCloseTo(ORIGIN.lon, 9);
		expect(g.height).toBeCloseTo(ORIGIN.height, 4);
	});
});

describe("conventions", () => {
	it("longitude normalizes into (-180, 180]", () => {
		expect(normalizeLon(190)).toBeCloseTo(-170, 12);
		expect(normalizeLon(-185)).toBeCloseTo(175, 12);
		expect(normalizeLon(180)).toBe(180);
		expect(normalizeLon(540)).toBeCloseTo(180, 12);
	});

	it("heading: identity faces north, yaw 90 faces east", () => {
		expect(headingOf([1, 0, 0, 0])).toBeCloseTo(0, 9);
		const h = Math.SQRT1_2;
		expect(headingOf([h, 0, h, 0])).toBeCloseTo(90, 6);
	});
});
