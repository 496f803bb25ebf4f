/* tslint:disable */
/* eslint-disable */

export class Ecology {
    free(): void;
    [Symbol.dispose](): void;
    height(): number;
    /**
     * JSON description of the unit at `(x, y)`, or `null`.
     */
    inspect(x: number, y: number): string;
    /**
     * NaN until some unit has earned anything.
     */
    mean_entropy(): number;
    /**
     * Default configuration with the given seed.
     */
    constructor(seed: number);
    noise_fraction(): number;
    population(): number;
    /**
     * Row-major RGBA. Streams are drawn faintly underneath; a unit takes the
     * color of its main food source, brighter with more energy.
     */
    render_rgba(): Uint8Array;
    /**
     * Advances `n` ticks, stopping early on collapse. Returns the population.
     */
    step(n: number): number;
    tick(): number;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_ecology_free: (a: number, b: number) => void;
    readonly ecology_height: (a: number) => number;
    readonly ecology_inspect: (a: number, b: number, c: number) => [number, number];
    readonly ecology_mean_entropy: (a: number) => number;
    readonly ecology_new: (a: number) => [number, number, number];
    readonly ecology_noise_fraction: (a: number) => number;
    readonly ecology_population: (a: number) => number;
    readonly ecology_render_rgba: (a: number) => [number, number];
    readonly ecology_step: (a: number, b: number) => number;
    readonly ecology_tick: (a: number) => number;
    readonly ecology_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
