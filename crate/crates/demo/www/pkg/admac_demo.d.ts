/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Greedy episode under the given attack and defense. Returns every
     * frame's agent and target positions plus the perturbed message count.
     */
    episode(attack: string, objective: string, p: number, defense: string, seed: bigint): string;
    /**
     * Loads a trained bundle from the contents of its four files.
     */
    static fromBundle(meta: string, policy: Uint8Array, value: Uint8Array, estimator?: Uint8Array | null): Demo;
    info(): string;
    /**
     * Randomly initialised decomposable policy on a small task instance.
     */
    constructor(task: string, seed: bigint);
    /**
     * One sender's message to one receiver after a few random steps, before
     * and after the attack, with the receiver's action distributions.
     */
    perturb(attack: string, objective: string, seed: bigint): string;
    /**
     * Decide-probabilities of the message's most and least preferred actions
     * as its weight moves over `[0, w_max]`, for a random hidden state,
     * observation and message.
     */
    weightSweep(seed: bigint, w_max: number, steps: number): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_episode: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: bigint) => [number, number, number, number];
    readonly demo_fromBundle: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly demo_info: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: bigint) => [number, number, number];
    readonly demo_perturb: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly demo_weightSweep: (a: number, b: bigint, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
