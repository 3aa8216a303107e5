import { describe, expect, it } from "vitest";

import { canonicalJson, decode, encode, type Envelope, ProtocolError } from "../src/protocol.js";

// captured verbatim from the server's encoder (note the non-ASCII item id:
// the length prefix counts UTF-8 bytes, not characters)
const SERVER_SNAPSHOT_FRAME =
	'309\n{"body":{"chunk_count":1,"chunk_index":0,"items":[{"asset_ref":"","height":12.0,' +
	'"id":"né-1","kind":"ImageQuad","lat":41.8781,"lon":-87.6298,"metadata":{},' +
	'"orientation":[1.0,0.0,0.0,0.0],"scale":[1.0,1.0,1.0]}],' +
	'"origin":{"height":12.0,"lat":41.8781,"lon":-87.6298},"revision":3},"seq":7,"t":"ContentSnapshot"}';

describe("decode", () => {
	it("parses a frame captured from the server", () => {
		const msg = decode(SERVER_SNAPSHOT_FRAME);
		expect(msg.t).toBe("ContentSnapshot");
		expect(msg.seq).toBe(7);
		if (msg.t !== "ContentSnapshot") throw new Error("unreachable");
		expect(msg.body.revision).toBe(3);
		expect(msg.body.items[0].id).toBe("né-1");
		expect(msg.body.origin?.lat).toBeCloseTo(41.8781, 9);
	});

	it("rejects a wrong length prefix", () => {
		expect(() => decode("5\n{}")).toThrow(ProtocolError);
	});

	it("rejects frames without a prefix or with bad JSON", () => {
		expect(() => decode('{"t":"Ack"}')).toThrow(ProtocolError);
		expect(() => decode("3\n{{{")).toThrow(ProtocolError);
		expect(() => decode('22\n{"t":"Ack","seq":-1,"body":{}}')).toThrow(ProtocolError);
	});

	it("tolerates unknown body fields", () => {
		const payload = '{"body":{"ref_seq":4,"surprise":true},"seq":1,"t":"Ack"}';
		const msg = decode(`${payload.length}\n${payload}`);
		expect(msg.t).toBe("Ack");
	});
});

describe("encode", () => {
	it("round-trips through decode", () => {
		const env: Envelope = {
			t: "EditCommand",
			seq: 3,
			body: { item_id: "q1", editor_id: "console-a", geo: { lat: 41.9, lon: -87.6, height: 2 } },
		};
		const back = decode(encode(env));
		expect(back).toEqual(env);
	});

	it("counts UTF-8 bytes in the length prefix", () => {
		const env: Envelope = {
			t: "EditCommand",
			seq: 1,
			body: { item_id: "né-1", editor_id: "c", scale: [1, 1, 1] },
		};
		const frame = encode(env);
		const nl = frame.indexOf("\n");
		const payload = frame.slice(nl + 1);
		expect(Number(frame.slice(0, nl))).toBe(new TextEncoder().encode(payload).length);
		expect(Number(frame.slice(0, nl))).toBeGreaterThan(payload.length); // é is 2 bytes
		expect(decode(frame)).toEqual(env);
	});

	it("canonical JSON sorts keys recursively and drops nulls", () => {
		expect(canonicalJson({ b: 1, a: { d: null, c: 2 } })).toBe('{"a":{"c":2},"b":1}');
		expect(canonicalJson({ list: [3, { z: 1, a: 2 }] })).toBe('{"list":[3,{"a":2,"z":1}]}');
	});
});
